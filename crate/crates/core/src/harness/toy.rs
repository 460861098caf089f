//! Learnable points on the simplex shaped towards per-source Dirichlet
//! priors.

use ndarray::{Array2, Axis};

use super::adam::AdamState;
use super::config::{ExperimentConfig, ExperimentKind, RegularizerSpec};
use super::grad::softmax_chain_rows;
use super::report::{
    CdfTrace, CvmEntry, Histogram, LayerProbs, LossTrace, RunReport, SimplexSeries,
};
use crate::error::{Error, Result};
use crate::moe::{simplex_project, softmax_rows};
use crate::rng::Rng64;
use crate::shaping::{cvm_distance, dpsl_grad, dpsl_loss, ProbBatch, ShapingConfig};

/// Number of categories implied by the configured priors.
pub(crate) fn prior_categories(config: &ExperimentConfig) -> Result<usize> {
    if let Some(spec) = config.shaping.priors.values().next() {
        return Ok(spec.to_prior::<f64>()?.len());
    }
    if let Some(m) = &config.shaping.modality {
        if let Some(k) = m.groups.values().flatten().max() {
            return Ok(k + 1);
        }
    }
    Err(Error::config("shaping.priors is empty"))
}

/// Euclidean distance from `p` to the closest simplex vertex.
pub fn vertex_distance(p: &[f64]) -> f64 {
    (0..p.len())
        .map(|v| {
            p.iter()
                .enumerate()
                .map(|(i, &x)| if i == v { (1.0 - x).powi(2) } else { x * x })
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

struct Toy {
    shaping: ShapingConfig<f64>,
    tags: Vec<String>,
    logits: Array2<f64>,
}

impl Toy {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        if config.kind != ExperimentKind::ShapeToy {
            return Err(Error::config("run_shape_toy needs kind `shape-toy`"));
        }
        config.validate()?;
        if config.sources.is_empty() {
            return Err(Error::config("shape-toy needs at least one source"));
        }
        let mut lambda = config.shaping.lambda;
        for r in &config.regularizers {
            match r {
                RegularizerSpec::None => {}
                RegularizerSpec::Dpsl { weight } => lambda = weight.unwrap_or(lambda),
                other => {
                    return Err(Error::config(format!(
                        "shape-toy supports only the dpsl regularizer, got `{}`",
                        other.name()
                    )))
                }
            }
        }
        let k = prior_categories(config)?;
        let shaping = config.shaping.to_config::<f64>(k)?.with_lambda(lambda)?;
        let mut tags = Vec::new();
        for s in &config.sources {
            shaping.prior_for(&s.tag)?;
            tags.extend(std::iter::repeat_n(s.tag.clone(), s.count));
        }
        let mut rng = Rng64::with_stream(config.seed, 0);
        let std = config.init_std;
        let logits = Array2::from_shape_simple_fn((tags.len(), k), || std * rng.normal());
        Ok(Self {
            shaping,
            tags,
            logits,
        })
    }

    fn batch(&self) -> Result<ProbBatch<f64>> {
        ProbBatch::with_tags(softmax_rows(&self.logits), self.tags.clone())
    }
}

fn finite(loss: f64, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!(
            "non-finite loss {loss} at step {step}"
        )))
    }
}

pub fn run_shape_toy(config: &ExperimentConfig) -> Result<RunReport> {
    let mut toy = Toy::new(config)?;
    let steps = config.steps();
    let mut adam = AdamState::new(toy.logits.raw_dim(), config.lr())?;
    let mut trace = LossTrace::new(&["loss"]);
    for step in 0..steps {
        let batch = toy.batch()?;
        trace.push(vec![finite(dpsl_loss(&batch, &toy.shaping)?, step)?]);
        let grad = softmax_chain_rows(batch.probs(), &dpsl_grad(&batch, &toy.shaping)?)?;
        adam.step(&mut toy.logits, grad.view())?;
    }

    let batch = toy.batch()?;
    let mut report = RunReport::empty(config.clone());
    report
        .summary
        .insert("initial_loss".into(), trace.values[0][0]);
    report.summary.insert(
        "final_loss".into(),
        finite(dpsl_loss(&batch, &toy.shaping)?, steps)?,
    );
    report.loss = trace;

    let eps = toy.shaping.clamp_eps();
    for (tag, rows) in batch.groups() {
        let probs = batch.probs().select(Axis(0), &rows);
        let prior = toy.shaping.prior_for(tag)?;
        for (k, params) in prior.marginals().iter().enumerate() {
            let column = probs.column(k).to_vec();
            report
                .cdf_traces
                .push(CdfTrace::new(tag, k, &column, params, eps)?);
            report.histograms.push(Histogram::new(
                tag,
                k,
                &column,
                config.histogram_bins,
                Some(params),
            )?);
            let clamped: Vec<f64> = column.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
            report.cvm.push(CvmEntry {
                layer: 0,
                source: tag.to_string(),
                category: k,
                distance: cvm_distance(&clamped, params)?,
            });
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            report.summary.insert(format!("mean_p_{tag}_{k}"), mean);
        }
        let dist = probs
            .rows()
            .into_iter()
            .map(|r| vertex_distance(r.as_slice().expect("standard layout")))
            .sum::<f64>()
            / rows.len() as f64;
        report
            .summary
            .insert(format!("vertex_distance_{tag}"), dist);
        if probs.ncols() == 3 {
            report.simplex.push(SimplexSeries {
                source: tag.to_string(),
                points: simplex_project(&probs)?,
            });
        }
    }
    report.final_probs.push(LayerProbs { layer: 0, batch });
    Ok(report)
}
