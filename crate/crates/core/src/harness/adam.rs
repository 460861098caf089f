//! Bias-corrected Adam over `f64` ndarray parameters.

use ndarray::{Array, ArrayView, Dimension, Zip};

use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<D: Dimension> {
    m: Array<f64, D>,
    v: Array<f64, D>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<D: Dimension> AdamState<D> {
    /// Zeroed moments for parameters of shape `shape`, default betas and eps.
    pub fn new(shape: D, lr: f64) -> Result<Self> {
        Self::with_hyper(shape, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyper(shape: D, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::config(format!("eps must be > 0, got {eps}")));
        }
        Ok(Self {
            m: Array::zeros(shape.clone()),
            v: Array::zeros(shape),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn m(&self) -> &Array<f64, D> {
        &self.m
    }

    pub fn v(&self) -> &Array<f64, D> {
        &self.v
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut Array<f64, D>, grads: ArrayView<'_, f64, D>) -> Result<()> {
        if params.shape() != grads.shape() || params.shape() != self.m.shape() {
            return Err(Error::shape(format!(
                "adam: params {:?}, grads {:?}, state {:?}",
                params.shape(),
                grads.shape(),
                self.m.shape()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("adam: non-finite gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        Zip::from(params)
            .and(&grads)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<D: Dimension>(
    params: &Array<f64, D>,
    grads: ArrayView<'_, f64, D>,
    state: &AdamState<D>,
) -> Result<(Array<f64, D>, AdamState<D>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1, Ix1};

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = arr1(&[1.0, -2.0]);
        let s = AdamState::new(Ix1(2), 0.1).unwrap();
        let (q, s) = adam_step(&p, Array1::zeros(2).view(), &s).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.t(), 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let s = AdamState::new(Ix1(1), 0.1).unwrap();
        let (q, _) = adam_step(&arr1(&[0.0]), arr1(&[1.0]).view(), &s).unwrap();
        assert!((q[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn quadratic_trace_matches_reference() {
        let c = arr1(&[1.0, 3.0, 0.5]);
        let target = arr1(&[0.0, 1.0, -1.0]);
        let mut x = arr1(&[1.0, -2.0, 0.5]);
        let mut s = AdamState::new(Ix1(3), 0.1).unwrap();
        for _ in 0..10 {
            let g = &c * &(&x - &target);
            s.step(&mut x, g.view()).unwrap();
        }
        let expected = [0.07624916061975533, -1.014188409035791, -0.4620465750639109];
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = AdamState::new(Ix1(2), 0.1).unwrap();
        let mut p = arr1(&[0.0, 0.0]);
        assert!(matches!(
            s.step(&mut p, arr1(&[1.0]).view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            s.step(&mut p, arr1(&[f64::NAN, 0.0]).view()),
            Err(Error::Numeric(_))
        ));
        assert_eq!(s.t(), 0);
        assert!(AdamState::new(Ix1(1), 0.0).is_err());
        assert!(AdamState::with_hyper(Ix1(1), 0.1, 1.0, 0.999, 1e-8).is_err());
    }
}
