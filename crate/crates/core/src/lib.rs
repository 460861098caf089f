//! Dirichlet-prior shaping for categorical probability outputs.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the experiment harness uses
//! throughout.

pub mod dirichlet;
pub mod error;
pub mod harness;
pub mod moe;
pub mod rng;
pub mod scalar;
pub mod shaping;
pub mod specfun;
pub mod upcycle;

pub use error::{Error, Result};
pub use rng::Rng64;
pub use scalar::Scalar;

pub type Beta = specfun::BetaParams<f64>;
pub type Dirichlet = dirichlet::DirichletPrior<f64>;
pub type Simplex = dirichlet::SimplexPoint<f64>;
pub type Batch = shaping::ProbBatch<f64>;
pub type Shaping = shaping::ShapingConfig<f64>;

pub type BetaF32 = specfun::BetaParams<f32>;
pub type DirichletF32 = dirichlet::DirichletPrior<f32>;
pub type BatchF32 = shaping::ProbBatch<f32>;
pub type ShapingF32 = shaping::ShapingConfig<f32>;
