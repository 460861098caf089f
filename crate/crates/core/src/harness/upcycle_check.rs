//! Functional-equivalence check of upcycled experts against their dense
//! source.

use ndarray::Array2;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::RunReport;
use crate::error::{Error, Result};
use crate::moe::{Activation, GatedFfn, MoEConfig, RouterParams};
use crate::rng::Rng64;
use crate::upcycle::{equivalence_check, granular_upcycle, UpcycleConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct UpcycleCheck {
    pub n_experts: usize,
    pub granularity: usize,
    pub sigma: f64,
    pub seed: u64,
    pub d_model: usize,
    pub hidden: usize,
    pub tokens: usize,
    pub top_k: usize,
    pub activation: Activation,
}

impl UpcycleCheck {
    pub fn new(n_experts: usize, granularity: usize, sigma: f64) -> Self {
        Self {
            n_experts,
            granularity,
            sigma,
            seed: 0,
            d_model: 16,
            hidden: 64,
            tokens: 1000,
            top_k: 2.min(n_experts),
            activation: Activation::SigmoidLinear,
        }
    }

    /// Largest absolute output difference against the dense FFN.
    pub fn max_deviation(&self) -> Result<f64> {
        let mut rng = Rng64::with_stream(self.seed, 0);
        let dense = GatedFfn::random(
            self.d_model,
            self.hidden,
            true,
            self.activation,
            1.0,
            &mut rng,
        )?;
        let experts = granular_upcycle(
            &dense,
            &UpcycleConfig::new(self.n_experts, self.granularity, self.sigma, rng.next_u64()),
        )?;
        let router = RouterParams::random(self.d_model, self.n_experts, 1.0, &mut rng)?;
        let mut moe = MoEConfig::new(self.n_experts, self.top_k)?;
        moe.renormalize_gates = true;
        let tokens = Array2::from_shape_simple_fn((self.tokens, self.d_model), || rng.normal());
        equivalence_check(&dense, &experts, &router, &moe, tokens.view())
    }
}

pub fn run_upcycle_check(config: &ExperimentConfig) -> Result<RunReport> {
    if config.kind != ExperimentKind::UpcycleCheck {
        return Err(Error::config(
            "run_upcycle_check needs kind `upcycle-check`",
        ));
    }
    config.validate()?;
    let spec = config.moe_spec();
    let mut check = UpcycleCheck::new(spec.n_experts, spec.granularity, spec.expert_noise);
    check.seed = config.seed;
    check.d_model = spec.d_model;
    check.hidden = spec.hidden;
    check.top_k = spec.top_k;
    check.activation = spec.activation;
    let tokens: usize = config.sources.iter().map(|s| s.count).sum();
    if tokens > 0 {
        check.tokens = tokens;
    }
    let dev = check.max_deviation()?;
    let mut report = RunReport::empty(config.clone());
    report.summary.insert("max_abs_diff".into(), dev);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_without_noise() {
        for g in [1, 2, 4] {
            let dev = UpcycleCheck::new(4 * g, g, 0.0).max_deviation().unwrap();
            assert!(dev < 1e-12, "G={g}: {dev}");
        }
        assert!(UpcycleCheck::new(4, 1, 0.01).max_deviation().unwrap() > 1e-6);
    }

    #[test]
    fn from_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "upcycle-check", "moe": {"n_experts": 8, "granularity": 4, "expert_noise": 0}}"#,
        )
        .unwrap();
        assert!(run_upcycle_check(&cfg).unwrap().summary["max_abs_diff"] < 1e-12);
    }
}
