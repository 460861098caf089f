//! Dirichlet priors over the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::scalar::Scalar;
use crate::specfun::{log_gamma, BetaParams};

/// Concentration vector `alpha` (all positive, at least two components)
/// with its cached total.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletPrior<T> {
    alpha: Vec<T>,
    total: T,
}

impl<T: Scalar> DirichletPrior<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::domain(format!(
                "a Dirichlet prior needs at least 2 components, got {}",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a > T::zero())) {
            return Err(Error::domain(format!(
                "concentration parameters must be finite and positive, got {bad}"
            )));
        }
        let total = alpha.iter().copied().sum();
        Ok(Self { alpha, total })
    }

    pub fn symmetric(k: usize, alpha: T) -> Result<Self> {
        Self::new(vec![alpha; k])
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// Sum of the concentration parameters.
    pub fn total(&self) -> T {
        self.total
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mean(&self) -> Vec<T> {
        self.alpha.iter().map(|&a| a / self.total).collect()
    }

    /// Marginal law of component `k`: `Beta(alpha_k, A - alpha_k)`.
    pub fn marginal(&self, k: usize) -> Result<BetaParams<T>> {
        let a = *self.alpha.get(k).ok_or(Error::Index {
            index: k,
            len: self.alpha.len(),
        })?;
        BetaParams::new(a, self.total - a)
    }

    pub fn marginals(&self) -> Vec<BetaParams<T>> {
        (0..self.len())
            .map(|k| self.marginal(k).expect("valid prior has valid marginals"))
            .collect()
    }

    /// `ln B(alpha) = sum ln Γ(alpha_k) - ln Γ(A)`.
    pub fn log_normalizer(&self) -> T {
        let mut acc = T::zero();
        for &a in &self.alpha {
            acc += log_gamma(a).expect("validated shape");
        }
        acc - log_gamma(self.total).expect("validated shape")
    }

    /// Log density at an interior simplex point (every `p_k > 0`).
    pub fn log_pdf(&self, point: &SimplexPoint<T>) -> Result<T> {
        if point.len() != self.len() {
            return Err(Error::shape(format!(
                "point has {} components, prior has {}",
                point.len(),
                self.len()
            )));
        }
        let mut acc = T::zero();
        for (&a, &p) in self.alpha.iter().zip(point.as_slice()) {
            if p <= T::zero() {
                return Err(Error::domain("log_pdf needs strictly interior points"));
            }
            acc += (a - T::one()) * p.ln();
        }
        Ok(acc - self.log_normalizer())
    }

    /// Prior over the aggregated components: one component per group, with
    /// concentration equal to the sum over the group.
    pub fn aggregate(&self, groups: &[Vec<usize>]) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::Partition("need at least two groups".into()));
        }
        let mut seen = vec![false; self.len()];
        let mut alpha = Vec::with_capacity(groups.len());
        for group in groups {
            if group.is_empty() {
                return Err(Error::Partition("empty group".into()));
            }
            let mut sum = T::zero();
            for &i in group {
                match seen.get_mut(i) {
                    None => {
                        return Err(Error::Partition(format!(
                            "index {i} out of range for {} categories",
                            self.len()
                        )))
                    }
                    Some(true) => return Err(Error::Partition(format!("index {i} appears twice"))),
                    Some(s) => *s = true,
                }
                sum += self.alpha[i];
            }
            alpha.push(sum);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("index {missing} not covered")));
        }
        Self::new(alpha)
    }

    /// One draw by normalizing independent Gamma(alpha_k, 1) variates.
    pub fn sample<G: GammaSource>(&self, source: &mut G) -> SimplexPoint<T> {
        let logs: Vec<f64> = self
            .alpha
            .iter()
            .map(|a| source.log_gamma_variate(a.as_f64()))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        SimplexPoint {
            p: weights.iter().map(|w| T::lit(w / sum)).collect(),
        }
    }
}

/// Source of Gamma(shape, 1) variates for Dirichlet sampling.
pub trait GammaSource {
    fn gamma(&mut self, shape: f64) -> f64;

    /// Log of a Gamma variate. Overridden where small shapes would underflow.
    fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        self.gamma(shape).ln()
    }
}

impl GammaSource for Rng64 {
    fn gamma(&mut self, shape: f64) -> f64 {
        self.log_gamma_variate(shape).exp()
    }

    /// Marsaglia–Tsang squeeze/rejection for shape >= 1; shapes below one
    /// draw at `shape + 1` and scale by `U^(1/shape)`, done in log space.
    fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let boosted = marsaglia_tsang(self, shape + 1.0).ln();
            return boosted + self.uniform_open0().ln() / shape;
        }
        marsaglia_tsang(self, shape).ln()
    }
}

fn marsaglia_tsang(rng: &mut Rng64, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open0();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// A probability vector: entries in `[0, 1]` summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint<T> {
    p: Vec<T>,
}

impl<T: Scalar> SimplexPoint<T> {
    pub fn new(p: Vec<T>) -> Result<Self> {
        check_simplex_row(&p, T::SIMPLEX_TOL)?;
        Ok(Self { p })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<T> {
        self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub(crate) fn check_simplex_row<T: Scalar>(row: &[T], tol: f64) -> Result<()> {
    if let Some(bad) = row
        .iter()
        .find(|v| !(v.is_finite() && **v >= T::zero() && **v <= T::one()))
    {
        return Err(Error::domain(format!("probability {bad} outside [0, 1]")));
    }
    let sum: T = row.iter().copied().sum();
    if (sum.as_f64() - 1.0).abs() > tol {
        return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Prior as written in configuration files: an explicit concentration
/// array, or `{"symmetric": {"k": 4, "alpha": 1.5}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Explicit(Vec<f64>),
    Symmetric { symmetric: SymmetricSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetricSpec {
    pub k: usize,
    pub alpha: f64,
}

impl PriorSpec {
    pub fn to_prior<T: Scalar>(&self) -> Result<DirichletPrior<T>> {
        match self {
            PriorSpec::Explicit(alpha) => {
                DirichletPrior::new(alpha.iter().map(|&a| T::lit(a)).collect())
            }
            PriorSpec::Symmetric { symmetric } => {
                DirichletPrior::symmetric(symmetric.k, T::lit(symmetric.alpha))
            }
        }
    }
}

impl<T: Scalar> From<&DirichletPrior<T>> for PriorSpec {
    fn from(prior: &DirichletPrior<T>) -> Self {
        PriorSpec::Explicit(prior.alpha.iter().map(|a| a.as_f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dir(alpha: &[f64]) -> DirichletPrior<f64> {
        DirichletPrior::new(alpha.to_vec()).unwrap()
    }

    fn point(p: &[f64]) -> SimplexPoint<f64> {
        SimplexPoint::new(p.to_vec()).unwrap()
    }

    #[test]
    fn construction() {
        assert!(DirichletPrior::new(vec![1.0]).is_err());
        assert!(DirichletPrior::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletPrior::new(vec![1.0, f64::NAN]).is_err());
        let p = dir(&[3.0, 1.0, 0.5]);
        assert_eq!(p.total(), 4.5);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn marginals() {
        let m = dir(&[1.5, 1.5, 1.5]).marginal(0).unwrap();
        assert_eq!((m.a(), m.b()), (1.5, 3.0));
        let m = dir(&[3.0, 1.0, 0.5]).marginal(0).unwrap();
        assert_eq!((m.a(), m.b()), (3.0, 1.5));
        let m = dir(&[1.0, 1.0]).marginal(1).unwrap();
        assert_eq!((m.a(), m.b()), (1.0, 1.0));
        assert!(matches!(
            dir(&[1.0, 1.0]).marginal(2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn log_pdf_examples() {
        let flat = dir(&[1.0, 1.0, 1.0]);
        for p in [[0.2, 0.3, 0.5], [0.9, 0.05, 0.05]] {
            assert_abs_diff_eq!(
                flat.log_pdf(&point(&p)).unwrap(),
                2f64.ln(),
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            dir(&[2.0, 2.0]).log_pdf(&point(&[0.5, 0.5])).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-12
        );
        // mpmath evaluation of the density formula.
        assert_abs_diff_eq!(
            dir(&[3.0, 1.0, 0.5])
                .log_pdf(&point(&[0.6, 0.3, 0.1]))
                .unwrap(),
            1.3178657463228383,
            epsilon = 1e-12
        );
        assert!(matches!(
            flat.log_pdf(&point(&[0.5, 0.5])),
            Err(Error::Shape(_))
        ));
        assert!(flat.log_pdf(&point(&[0.0, 0.5, 0.5])).is_err());
    }

    #[test]
    fn log_pdf_integrates_to_one_for_two_components() {
        // Composite midpoint rule over p1; no endpoint evaluations needed.
        for alpha in [[2.0, 3.0], [1.5, 1.5], [1.0, 1.0], [5.0, 2.5]] {
            let prior = dir(&alpha);
            let n = 200_000;
            let h = 1.0 / n as f64;
            let integral: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) * h;
                    prior.log_pdf(&point(&[x, 1.0 - x])).unwrap().exp()
                })
                .sum::<f64>()
                * h;
            assert!((integral - 1.0).abs() < 1e-6, "{alpha:?}: {integral}");
        }
    }

    #[test]
    fn aggregation() {
        let agg = dir(&[1.0, 2.0, 3.0])
            .aggregate(&[vec![0], vec![1, 2]])
            .unwrap();
        assert_eq!(agg.alpha(), &[1.0, 5.0]);
        let same = dir(&[0.5, 4.0]).aggregate(&[vec![0], vec![1]]).unwrap();
        assert_eq!(same.alpha(), &[0.5, 4.0]);
        let pairs = dir(&[1.0; 4]).aggregate(&[vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(pairs.alpha(), &[2.0, 2.0]);

        let p = dir(&[1.0, 2.0, 3.0]);
        assert!(p.aggregate(&[vec![0, 1, 2]]).is_err());
        assert!(p.aggregate(&[vec![0], vec![1]]).is_err());
        assert!(p.aggregate(&[vec![0, 1], vec![1, 2]]).is_err());
        assert!(p.aggregate(&[vec![0], vec![1, 2, 3]]).is_err());
        assert!(p.aggregate(&[vec![0, 1, 2], vec![]]).is_err());
    }

    struct ConstantGamma;

    impl GammaSource for ConstantGamma {
        fn gamma(&mut self, _shape: f64) -> f64 {
            2.5
        }
    }

    #[test]
    fn equal_variates_give_uniform_point() {
        let s: SimplexPoint<f64> = dir(&[3.0, 1.0, 0.5, 7.0]).sample(&mut ConstantGamma);
        for &v in s.as_slice() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn monte_carlo_means() {
        for (alpha, want) in [([1.5, 1.5, 1.5], 1.0 / 3.0), ([3.0, 1.0, 0.5], 3.0 / 4.5)] {
            let prior = dir(&alpha);
            let mut rng = Rng64::new(11);
            let n = 100_000;
            let mean = (0..n)
                .map(|_| prior.sample(&mut rng).as_slice()[0])
                .sum::<f64>()
                / n as f64;
            assert!((mean - want).abs() < 0.005, "{alpha:?}: {mean}");
        }
    }

    #[test]
    fn gamma_variate_moments() {
        let mut rng = Rng64::new(5);
        for shape in [0.2, 0.75, 1.0, 3.5] {
            let n = 100_000;
            let mean = (0..n).map(|_| rng.gamma(shape)).sum::<f64>() / n as f64;
            assert!(
                (mean - shape).abs() < 0.03 * shape.max(1.0),
                "{shape}: {mean}"
            );
        }
    }

    #[test]
    fn prior_spec_forms() {
        let explicit: PriorSpec = serde_json::from_str("[3, 1, 0.5]").unwrap();
        assert_eq!(
            explicit.to_prior::<f64>().unwrap().alpha(),
            &[3.0, 1.0, 0.5]
        );
        let sym: PriorSpec =
            serde_json::from_str(r#"{"symmetric": {"k": 4, "alpha": 1.5}}"#).unwrap();
        assert_eq!(sym.to_prior::<f64>().unwrap().alpha(), &[1.5; 4]);
        assert!(serde_json::from_str::<PriorSpec>(
            r#"{"symmetric": {"k": 4, "alpha": 1.5, "x": 1}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<PriorSpec>("[1.0]")
            .unwrap()
            .to_prior::<f64>()
            .is_err());
    }

    proptest! {
        #[test]
        fn samples_are_simplex_points(
            alpha in prop::collection::vec(0.05f64..8.0, 2..7),
            seed in any::<u64>(),
        ) {
            let prior = dir(&alpha);
            let mut rng = Rng64::new(seed);
            for _ in 0..20 {
                let s: SimplexPoint<f64> = prior.sample(&mut rng);
                prop_assert!(check_simplex_row(s.as_slice(), f64::SIMPLEX_TOL).is_ok());
            }
        }
    }
}
