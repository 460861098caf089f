//! Dirichlet-prior shaping loss.
//!
//! For every category `k` the batch column `p_k` is sorted, the empirical
//! CDF is taken as exactly `j / B` at the `j`-th smallest value, and the
//! squared gap to the target marginal CDF `Beta(alpha_k, A - alpha_k)` is
//! averaged over the batch:
//!
//! ```text
//! L = lambda * sum_k (1/B) sum_j [ j/B - F_Beta(p_k,(j)) ]^2
//! ```
//!
//! Rows carrying different source tags are matched against their own prior
//! with a group-local `B`, and the group losses are summed. The gradient
//! treats the ranks as constants of the current ordering, so the derivative
//! of each term only involves the Beta density.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dirichlet::{check_simplex_row, DirichletPrior, PriorSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::specfun::{beta_cdf, beta_pdf, BetaParams};

/// Prior key used for untagged rows, and for tags with no prior of their own.
pub const DEFAULT_TAG: &str = "default";

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// `B x K` row-stochastic matrix with optional per-row source tags.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbBatch<T> {
    probs: Array2<T>,
    tags: Option<Vec<String>>,
}

impl<T: Scalar> ProbBatch<T> {
    pub fn new(probs: Array2<T>) -> Result<Self> {
        let (b, k) = probs.dim();
        if b < 1 || k < 2 {
            return Err(Error::shape(format!(
                "probability batch must be at least 1x2, got {b}x{k}"
            )));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            let row: Vec<T> = row.to_vec();
            check_simplex_row(&row, T::BATCH_TOL)
                .map_err(|e| Error::domain(format!("row {i}: {e}")))?;
        }
        Ok(Self { probs, tags: None })
    }

    /// Skips the row-sum check, for evaluating the loss at points just off
    /// the simplex (finite-difference probes). Only the shape is checked.
    pub fn new_unchecked(probs: Array2<T>, tags: Option<Vec<String>>) -> Result<Self> {
        if probs.nrows() < 1 || probs.ncols() < 2 {
            return Err(Error::shape(format!(
                "probability batch must be at least 1x2, got {:?}",
                probs.dim()
            )));
        }
        if tags.as_ref().is_some_and(|t| t.len() != probs.nrows()) {
            return Err(Error::shape("one tag per row required"));
        }
        Ok(Self { probs, tags })
    }

    pub fn with_tags(probs: Array2<T>, tags: Vec<String>) -> Result<Self> {
        if tags.len() != probs.nrows() {
            return Err(Error::shape(format!(
                "{} tags for {} rows",
                tags.len(),
                probs.nrows()
            )));
        }
        let mut batch = Self::new(probs)?;
        batch.tags = Some(tags);
        Ok(batch)
    }

    pub fn probs(&self) -> &Array2<T> {
        &self.probs
    }

    pub fn tags(&self) -> Option<&[String]> {
        self.tags.as_deref()
    }

    pub fn rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn categories(&self) -> usize {
        self.probs.ncols()
    }

    pub fn tag(&self, row: usize) -> &str {
        self.tags.as_ref().map_or(DEFAULT_TAG, |t| t[row].as_str())
    }

    /// Row indices per source tag, tags in lexicographic order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for row in 0..self.rows() {
            groups.entry(self.tag(row)).or_default().push(row);
        }
        groups
    }
}

/// How per-layer shaping losses combine when several routers are shaped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerReduction {
    #[default]
    Sum,
    Mean,
}

impl LayerReduction {
    pub fn weight<T: Scalar>(self, layers: usize) -> T {
        match self {
            LayerReduction::Sum => T::one(),
            LayerReduction::Mean => T::one() / T::from_usize_lossy(layers.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapingConfig<T> {
    lambda: T,
    clamp_eps: T,
    priors: BTreeMap<String, DirichletPrior<T>>,
    layer_reduction: LayerReduction,
}

impl<T: Scalar> ShapingConfig<T> {
    pub fn new(
        lambda: T,
        clamp_eps: T,
        priors: BTreeMap<String, DirichletPrior<T>>,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(clamp_eps > T::zero() && clamp_eps < T::lit(0.01)) {
            return Err(Error::config(format!(
                "clamp_eps must lie in (0, 0.01), got {clamp_eps}"
            )));
        }
        if priors.is_empty() {
            return Err(Error::config("at least one prior is required"));
        }
        let k = priors.values().next().map(DirichletPrior::len);
        if priors.values().any(|p| Some(p.len()) != k) {
            return Err(Error::config(
                "all priors must have the same number of components",
            ));
        }
        Ok(Self {
            lambda,
            clamp_eps,
            priors,
            layer_reduction: LayerReduction::Sum,
        })
    }

    /// One prior for every row, default clamping.
    pub fn single(lambda: T, prior: DirichletPrior<T>) -> Result<Self> {
        let priors = BTreeMap::from([(DEFAULT_TAG.to_string(), prior)]);
        Self::new(lambda, T::lit(DEFAULT_CLAMP_EPS), priors)
    }

    pub fn with_layer_reduction(mut self, reduction: LayerReduction) -> Self {
        self.layer_reduction = reduction;
        self
    }

    pub fn with_lambda(mut self, lambda: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn clamp_eps(&self) -> T {
        self.clamp_eps
    }

    pub fn priors(&self) -> &BTreeMap<String, DirichletPrior<T>> {
        &self.priors
    }

    pub fn layer_reduction(&self) -> LayerReduction {
        self.layer_reduction
    }

    pub fn categories(&self) -> usize {
        self.priors.values().next().map_or(0, DirichletPrior::len)
    }

    /// Prior for a source tag, falling back to [`DEFAULT_TAG`].
    pub fn prior_for(&self, tag: &str) -> Result<&DirichletPrior<T>> {
        self.priors
            .get(tag)
            .or_else(|| self.priors.get(DEFAULT_TAG))
            .ok_or_else(|| Error::MissingPrior(tag.to_string()))
    }

    fn clamp(&self, p: T) -> T {
        p.max(self.clamp_eps).min(T::one() - self.clamp_eps)
    }
}

/// Sorted values with their empirical-CDF positions.
#[derive(Clone, Debug, PartialEq)]
pub struct EcdfPositions<T> {
    /// Values in ascending order; ties keep their original order.
    pub sorted: Vec<T>,
    /// `j / B` for the `j`-th sorted value (1-indexed).
    pub ranks: Vec<T>,
    /// `order[j]` is the original index of `sorted[j]`.
    pub order: Vec<usize>,
}

pub fn empirical_cdf_positions<T: Scalar>(values: &[T]) -> EcdfPositions<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort: equal values keep ascending original index.
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let n = T::from_usize_lossy(values.len());
    EcdfPositions {
        sorted: order.iter().map(|&i| values[i]).collect(),
        ranks: (1..=values.len())
            .map(|j| T::from_usize_lossy(j) / n)
            .collect(),
        order,
    }
}

/// Single-category distance `(1/B) sum_j [j/B - F(p_(j))]^2`.
pub fn cvm_distance<T: Scalar>(values: &[T], params: &BetaParams<T>) -> Result<T> {
    if values.is_empty() {
        return Err(Error::shape("cvm_distance needs at least one value"));
    }
    let ecdf = empirical_cdf_positions(values);
    let mut acc = T::zero();
    for (&p, &rank) in ecdf.sorted.iter().zip(&ecdf.ranks) {
        let gap = rank - beta_cdf(p, params)?;
        acc += gap * gap;
    }
    Ok(acc / T::from_usize_lossy(values.len()))
}

fn check_categories<T: Scalar>(batch: &ProbBatch<T>, prior: &DirichletPrior<T>) -> Result<()> {
    if prior.len() != batch.categories() {
        return Err(Error::shape(format!(
            "prior has {} components, batch has {} categories",
            prior.len(),
            batch.categories()
        )));
    }
    Ok(())
}

fn clamped_column<T: Scalar>(
    column: ArrayView1<'_, T>,
    rows: &[usize],
    config: &ShapingConfig<T>,
) -> Vec<T> {
    rows.iter().map(|&r| config.clamp(column[r])).collect()
}

/// Shaping loss of one batch.
pub fn dpsl_loss<T: Scalar>(batch: &ProbBatch<T>, config: &ShapingConfig<T>) -> Result<T> {
    let mut total = T::zero();
    for (tag, rows) in batch.groups() {
        let prior = config.prior_for(tag)?;
        check_categories(batch, prior)?;
        for (k, params) in prior.marginals().iter().enumerate() {
            let values = clamped_column(batch.probs.column(k), &rows, config);
            total += cvm_distance(&values, params)?;
        }
    }
    Ok(config.lambda * total)
}

/// Gradient of [`dpsl_loss`] with respect to every probability entry.
/// Entries that were clamped receive zero gradient.
pub fn dpsl_grad<T: Scalar>(batch: &ProbBatch<T>, config: &ShapingConfig<T>) -> Result<Array2<T>> {
    let mut grad = Array2::zeros(batch.probs.raw_dim());
    let lo = config.clamp_eps;
    let hi = T::one() - config.clamp_eps;
    for (tag, rows) in batch.groups() {
        let prior = config.prior_for(tag)?;
        check_categories(batch, prior)?;
        let n = T::from_usize_lossy(rows.len());
        let scale = config.lambda * T::lit(2.0) / n;
        for (k, params) in prior.marginals().iter().enumerate() {
            let column = batch.probs.column(k);
            let values = clamped_column(column, &rows, config);
            let ecdf = empirical_cdf_positions(&values);
            for ((&p, &rank), &local) in ecdf.sorted.iter().zip(&ecdf.ranks).zip(&ecdf.order) {
                let row = rows[local];
                let raw = column[row];
                if raw < lo || raw > hi {
                    continue;
                }
                let gap = beta_cdf(p, params)? - rank;
                grad[[row, k]] = scale * gap * beta_pdf(p, params)?;
            }
        }
    }
    Ok(grad)
}

/// Loss over several router layers, combined by the configured reduction.
pub fn dpsl_loss_layers<T: Scalar>(
    layers: &[ProbBatch<T>],
    config: &ShapingConfig<T>,
) -> Result<T> {
    let weight: T = config.layer_reduction.weight(layers.len());
    let mut total = T::zero();
    for batch in layers {
        total += dpsl_loss(batch, config)?;
    }
    Ok(weight * total)
}

/// Source-conditional priors: component `i` of tag `t`'s prior is
/// `alpha_base + alpha_spec` when `i` belongs to `t`'s expert group and
/// `alpha_base` otherwise.
pub fn build_modality_priors<T: Scalar>(
    alpha_base: T,
    alpha_spec: T,
    expert_groups: &BTreeMap<String, Vec<usize>>,
    k: usize,
) -> Result<BTreeMap<String, DirichletPrior<T>>> {
    if !(alpha_spec >= T::zero() && alpha_spec.is_finite()) {
        return Err(Error::config(format!(
            "alpha_spec must be >= 0, got {alpha_spec}"
        )));
    }
    let mut priors = BTreeMap::new();
    for (tag, group) in expert_groups {
        if group.is_empty() {
            return Err(Error::config(format!("expert group for `{tag}` is empty")));
        }
        let mut alpha = vec![alpha_base; k];
        for &i in group {
            let slot = alpha.get_mut(i).ok_or(Error::Index { index: i, len: k })?;
            *slot = alpha_base + alpha_spec;
        }
        priors.insert(tag.clone(), DirichletPrior::new(alpha)?);
    }
    Ok(priors)
}

/// `shaping` section of an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingSpec {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_clamp_eps")]
    pub clamp_eps: f64,
    #[serde(default)]
    pub priors: BTreeMap<String, PriorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<ModalitySpec>,
    #[serde(default)]
    pub layer_reduction: LayerReduction,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_clamp_eps() -> f64 {
    DEFAULT_CLAMP_EPS
}

impl Default for ShapingSpec {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            clamp_eps: DEFAULT_CLAMP_EPS,
            priors: BTreeMap::new(),
            modality: None,
            layer_reduction: LayerReduction::Sum,
        }
    }
}

/// Source-conditional prior recipe, expanded by [`build_modality_priors`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub alpha_base: f64,
    pub alpha_spec: f64,
    pub groups: BTreeMap<String, Vec<usize>>,
}

impl ShapingSpec {
    /// Builds the runtime config for `k` categories. Modality priors are
    /// merged over explicit ones.
    pub fn to_config<T: Scalar>(&self, k: usize) -> Result<ShapingConfig<T>> {
        let mut priors = BTreeMap::new();
        for (tag, spec) in &self.priors {
            let prior: DirichletPrior<T> = spec.to_prior()?;
            if prior.len() != k {
                return Err(Error::config(format!(
                    "prior `{tag}` has {} components, expected {k}",
                    prior.len()
                )));
            }
            priors.insert(tag.clone(), prior);
        }
        if let Some(m) = &self.modality {
            priors.extend(build_modality_priors(
                T::lit(m.alpha_base),
                T::lit(m.alpha_spec),
                &m.groups,
                k,
            )?);
        }
        Ok(
            ShapingConfig::new(T::lit(self.lambda), T::lit(self.clamp_eps), priors)?
                .with_layer_reduction(self.layer_reduction),
        )
    }
}
