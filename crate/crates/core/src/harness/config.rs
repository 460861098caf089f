//! Declarative experiment description, read from a single JSON document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::{Activation, MoEConfig};
use crate::shaping::ShapingSpec;
use crate::upcycle::ShardLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ShapeToy,
    RouterSim,
    UpcycleCheck,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ShapeToy => "shape-toy",
            Self::RouterSim => "router-sim",
            Self::UpcycleCheck => "upcycle-check",
        })
    }
}

impl ExperimentKind {
    fn default_steps(self) -> usize {
        match self {
            Self::ShapeToy => 100,
            Self::RouterSim => 300,
            Self::UpcycleCheck => 1,
        }
    }

    fn default_lr(self) -> f64 {
        match self {
            Self::ShapeToy => 0.1,
            _ => 2e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Std of the initial toy logits.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub shaping: ShapingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<SimMoeSpec>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub regularizers: Vec<RegularizerSpec>,
    /// Regularizers act only during the first `regularizer_steps` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer_steps: Option<usize>,
    /// Enables the synthetic regression objective in router-sim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_init_std() -> f64 {
    0.1
}

fn default_bins() -> usize {
    20
}

/// One synthetic data source. In router-sim its tokens are drawn from
/// `N(center, std^2 I)`; when `center` is omitted it is drawn from
/// `N(0, center_scale^2 I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub tag: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default = "unit")]
    pub center_scale: f64,
    #[serde(default = "unit")]
    pub std: f64,
}

fn unit() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn new(tag: impl Into<String>, count: usize) -> Self {
        Self {
            tag: tag.into(),
            count,
            center: None,
            center_scale: 1.0,
            std: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegularizerSpec {
    None,
    /// DPSL; `weight` overrides `shaping.lambda` when present.
    Dpsl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<f64>,
    },
    LoadBalance {
        #[serde(default = "lb_weight")]
        weight: f64,
    },
    ZLoss {
        #[serde(default = "z_weight")]
        weight: f64,
    },
    Deepseek {
        #[serde(default = "ds_rate")]
        update_rate: f64,
    },
}

fn lb_weight() -> f64 {
    0.01
}

fn z_weight() -> f64 {
    0.001
}

fn ds_rate() -> f64 {
    0.001
}

impl RegularizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Dpsl { .. } => "dpsl",
            Self::LoadBalance { .. } => "load-balance",
            Self::ZLoss { .. } => "z-loss",
            Self::Deepseek { .. } => "deepseek",
        }
    }

    fn weight(&self) -> Option<f64> {
        match *self {
            Self::None => None,
            Self::Dpsl { weight } => weight,
            Self::LoadBalance { weight } | Self::ZLoss { weight } => Some(weight),
            Self::Deepseek { update_rate } => Some(update_rate),
        }
    }
}

/// MoE stack simulated by router-sim and upcycle-check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMoeSpec {
    #[serde(default = "four")]
    pub n_experts: usize,
    #[serde(default = "two")]
    pub top_k: usize,
    #[serde(default)]
    pub n_shared: usize,
    #[serde(default)]
    pub renormalize_gates: bool,
    #[serde(default = "sixteen")]
    pub d_model: usize,
    /// Hidden width of the dense FFN the experts are upcycled from.
    #[serde(default = "thirty_two")]
    pub hidden: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "yes")]
    pub gated: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "router_std")]
    pub router_init_std: f64,
    #[serde(default = "expert_noise")]
    pub expert_noise: f64,
    #[serde(default = "one")]
    pub granularity: usize,
    #[serde(default)]
    pub shard_layout: ShardLayout,
    #[serde(default)]
    pub train_experts: bool,
}

fn four() -> usize {
    4
}
fn two() -> usize {
    2
}
fn one() -> usize {
    1
}
fn sixteen() -> usize {
    16
}
fn thirty_two() -> usize {
    32
}
fn yes() -> bool {
    true
}
fn router_std() -> f64 {
    0.02
}
fn expert_noise() -> f64 {
    0.01
}

impl Default for SimMoeSpec {
    fn default() -> Self {
        Self {
            n_experts: 4,
            top_k: 2,
            n_shared: 0,
            renormalize_gates: false,
            d_model: 16,
            hidden: 32,
            layers: 1,
            gated: true,
            activation: Activation::default(),
            router_init_std: router_std(),
            expert_noise: expert_noise(),
            granularity: 1,
            shard_layout: ShardLayout::Contiguous,
            train_experts: false,
        }
    }
}

impl SimMoeSpec {
    pub fn moe_config(&self) -> Result<MoEConfig> {
        let cfg = MoEConfig {
            n_experts: self.n_experts,
            top_k: self.top_k,
            n_shared: self.n_shared,
            renormalize_gates: self.renormalize_gates,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.moe_config()?;
        if self.d_model == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("d_model, hidden and layers must be >= 1"));
        }
        if !(self.router_init_std >= 0.0 && self.expert_noise >= 0.0) {
            return Err(Error::config(
                "router_init_std and expert_noise must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Std of the per-source regression targets.
    #[serde(default = "unit")]
    pub target_scale: f64,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            steps: None,
            lr: None,
            init_std: default_init_std(),
            shaping: ShapingSpec::default(),
            moe: None,
            sources: Vec::new(),
            regularizers: Vec::new(),
            regularizer_steps: None,
            task: None,
            histogram_bins: default_bins(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.kind.default_steps())
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }

    pub fn moe_spec(&self) -> SimMoeSpec {
        self.moe.clone().unwrap_or_default()
    }

    /// Whether regularizers are active at 0-based `step`.
    pub fn regularizers_active(&self, step: usize) -> bool {
        self.regularizer_steps.is_none_or(|n| step < n)
    }

    /// Structural checks that do not depend on the experiment kind's data.
    pub fn validate(&self) -> Result<()> {
        if self.steps() == 0 {
            return Err(Error::config("steps must be >= 1"));
        }
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("lr must be > 0, got {lr}")));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std must be >= 0"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::config("histogram_bins must be >= 1"));
        }
        let mut kinds = BTreeSet::new();
        for r in &self.regularizers {
            if !kinds.insert(r.name()) {
                return Err(Error::config(format!(
                    "regularizer `{}` listed twice",
                    r.name()
                )));
            }
            if let Some(w) = r.weight() {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::config(format!(
                        "regularizer `{}` needs a non-negative weight, got {w}",
                        r.name()
                    )));
                }
            }
        }
        let mut tags = BTreeSet::new();
        for s in &self.sources {
            if !tags.insert(s.tag.as_str()) {
                return Err(Error::config(format!("source `{}` listed twice", s.tag)));
            }
            if s.count == 0 {
                return Err(Error::config(format!("source `{}` has no samples", s.tag)));
            }
            if !(s.std >= 0.0 && s.center_scale >= 0.0) {
                return Err(Error::config(format!(
                    "source `{}` has a negative scale",
                    s.tag
                )));
            }
        }
        if let Some(m) = &self.moe {
            m.validate()?;
        }
        Ok(())
    }
}
