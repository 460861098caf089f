//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// A real scalar the distribution and routing math can run on: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tolerance on `|sum - 1|` for a single simplex point.
    const SIMPLEX_TOL: f64;
    /// Tolerance on `|sum - 1|` for rows of a probability batch.
    const BATCH_TOL: f64;

    /// Converts an `f64` literal. All literals used by this crate are
    /// representable in both supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const SIMPLEX_TOL: f64 = 1e-9;
    const BATCH_TOL: f64 = 1e-6;
}

impl Scalar for f32 {
    const SIMPLEX_TOL: f64 = 1e-5;
    const BATCH_TOL: f64 = 1e-4;
}
