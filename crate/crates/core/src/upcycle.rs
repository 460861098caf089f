//! Dense-to-MoE upcycling: noisy replication, granular sharding along the
//! hidden dimension, optional partial re-initialization, and a flat binary
//! format for expert sets.
//!
//! Binary layout (all integers u32 little-endian):
//!
//! | offset | field                                          |
//! |--------|------------------------------------------------|
//! | 0      | magic `b"DPSLEXPT"`                            |
//! | 8      | version (= 1)                                  |
//! | 12     | number of experts N                            |
//! | 16     | granularity G                                  |
//! | 20     | model dimension d                              |
//! | 24     | per-expert hidden dimension h                  |
//! | 28     | activation (0 sigmoid-linear, 1 tanh, 2 relu)  |
//! | 32     | gated flag (0 or 1)                            |
//! | 36     | weights                                        |
//!
//! Weights follow expert by expert: `W_up` (d x h), `W_gate` (d x h, only
//! when gated), `W_down` (h x d), each row-major as f64 little-endian.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::{moe_forward, Activation, DenseFfn, ExpertSet, GatedFfn, MoEConfig, RouterParams};
use crate::rng::Rng64;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DPSLEXPT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

/// How hidden units are dealt out to shards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardLayout {
    /// Shard `s` owns units `s*h/G .. (s+1)*h/G`.
    #[default]
    Contiguous,
    /// Shard `s` owns units `s, s+G, s+2G, ...`.
    Strided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpcycleConfig {
    /// Total routed experts; `n_experts / granularity` replicas of the shard set.
    pub n_experts: usize,
    #[serde(default = "one")]
    pub granularity: usize,
    /// Standard deviation of the additive Gaussian weight noise.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub layout: ShardLayout,
    /// Fraction of each weight tensor re-drawn from a normal matching the
    /// source tensor's standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reinit_ratio: Option<f64>,
}

fn one() -> usize {
    1
}

impl UpcycleConfig {
    pub fn new(n_experts: usize, granularity: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n_experts,
            granularity,
            noise_sigma,
            seed,
            layout: ShardLayout::Contiguous,
            reinit_ratio: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.granularity < 1 {
            return Err(Error::config("granularity must be >= 1"));
        }
        if self.n_experts == 0 || !self.n_experts.is_multiple_of(self.granularity) {
            return Err(Error::config(format!(
                "{} experts is not a positive multiple of granularity {}",
                self.n_experts, self.granularity
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if let Some(r) = self.reinit_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!(
                    "reinit_ratio must be in [0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Hidden-unit indices of each of the `g` shards.
pub fn shard_indices(hidden: usize, g: usize, layout: ShardLayout) -> Result<Vec<Vec<usize>>> {
    if g == 0 || !hidden.is_multiple_of(g) {
        return Err(Error::config(format!(
            "hidden size {hidden} is not divisible by granularity {g}"
        )));
    }
    let size = hidden / g;
    Ok((0..g)
        .map(|s| match layout {
            ShardLayout::Contiguous => (s * size..(s + 1) * size).collect(),
            ShardLayout::Strided => (0..size).map(|i| s + i * g).collect(),
        })
        .collect())
}

/// `N` full-size noisy replicas of the dense FFN.
pub fn standard_upcycle<T: Scalar>(
    ffn: &DenseFfn<T>,
    config: &UpcycleConfig,
) -> Result<ExpertSet<T>> {
    if config.granularity != 1 {
        return Err(Error::config(format!(
            "standard upcycling needs granularity 1, got {}",
            config.granularity
        )));
    }
    granular_upcycle(ffn, config)
}

/// `N / G` noisy replicas of the `G` hidden-dimension shards. Expert
/// `r * G + s` is shard `s` of replica `r`.
pub fn granular_upcycle<T: Scalar>(
    ffn: &DenseFfn<T>,
    config: &UpcycleConfig,
) -> Result<ExpertSet<T>> {
    config.validate()?;
    let g = config.granularity;
    let shards = shard_indices(ffn.hidden(), g, config.layout)?
        .iter()
        .map(|units| ffn.shard(units))
        .collect::<Result<Vec<_>>>()?;
    let mut experts = Vec::with_capacity(config.n_experts);
    for e in 0..config.n_experts {
        let mut expert = shards[e % g].clone();
        let mut rng = Rng64::with_stream(config.seed, e as u64);
        if config.noise_sigma > 0.0 {
            for w in expert.weights_mut() {
                w.mapv_inplace(|v| v + T::lit(config.noise_sigma * rng.normal()));
            }
        }
        if let Some(ratio) = config.reinit_ratio {
            let source: Vec<f64> = shards[e % g].weights().map(tensor_std).collect();
            for (w, std) in expert.weights_mut().zip(source) {
                reinit_fraction(w, ratio, std, &mut rng);
            }
        }
        experts.push(expert);
    }
    ExpertSet::new(experts, g)
}

fn tensor_std<T: Scalar>(w: &Array2<T>) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    (w.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Re-draws `round(ratio * len)` entries, chosen by a partial Fisher–Yates
/// shuffle, from `N(0, std^2)`.
fn reinit_fraction<T: Scalar>(w: &mut Array2<T>, ratio: f64, std: f64, rng: &mut Rng64) {
    let len = w.len();
    let count = (ratio * len as f64).round() as usize;
    let mut idx: Vec<usize> = (0..len).collect();
    let cols = w.ncols();
    for i in 0..count {
        let j = i + rng.below(len - i);
        idx.swap(i, j);
        w[[idx[i] / cols, idx[i] % cols]] = T::lit(std * rng.normal());
    }
}

/// Largest absolute deviation between the dense FFN and its upcycled form.
///
/// Granularity 1: the MoE layer (renormalized top-K gates, no shared
/// experts) against the dense output. Granularity G > 1: for every replica,
/// the sum of its G shard outputs at unit gate against the dense output.
pub fn equivalence_check<T: Scalar>(
    dense: &DenseFfn<T>,
    experts: &ExpertSet<T>,
    router: &RouterParams<T>,
    config: &MoEConfig,
    tokens: ArrayView2<'_, T>,
) -> Result<T> {
    let reference = dense.forward(tokens);
    let max_dev = |other: &Array2<T>| {
        (other - &reference)
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    };
    if experts.granularity() == 1 {
        if !config.renormalize_gates || config.n_shared != 0 {
            return Err(Error::config(
                "standard equivalence needs renormalized gates and no shared experts",
            ));
        }
        let out = moe_forward(tokens, experts, &ExpertSet::empty(), router, config)?;
        return Ok(max_dev(&out.output));
    }
    let g = experts.granularity();
    let mut worst = T::zero();
    for replica in experts.experts().chunks(g) {
        let mut sum = Array2::zeros(reference.raw_dim());
        for shard in replica {
            sum += &shard.forward(tokens);
        }
        worst = worst.max(max_dev(&sum));
    }
    Ok(worst)
}

pub fn write_expert_set<T: Scalar, W: Write>(
    set: &ExpertSet<T>,
    mut out: W,
) -> std::io::Result<()> {
    let first = set.experts().first();
    let header = [
        FORMAT_VERSION,
        set.len() as u32,
        set.granularity() as u32,
        first.map_or(0, GatedFfn::dim) as u32,
        first.map_or(0, GatedFfn::hidden) as u32,
        first.map_or(0, |e| e.activation().code()),
        first.map_or(0, |e| e.is_gated() as u32),
    ];
    out.write_all(MAGIC)?;
    for field in header {
        out.write_all(&field.to_le_bytes())?;
    }
    for expert in set.experts() {
        for w in expert.weights() {
            for v in w.iter() {
                out.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn expert_set_to_bytes<T: Scalar>(set: &ExpertSet<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_expert_set(set, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_expert_set<T: Scalar, R: Read>(mut input: R) -> Result<ExpertSet<T>> {
    let bad = |msg: &str| Error::Domain(format!("malformed expert file: {msg}"));
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| bad("truncated header"))?;
    if &header[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let field = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(header[at..at + 4].try_into().expect("4 bytes"))
    };
    if field(0) != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", field(0))));
    }
    let (n, g, d, h) = (
        field(1) as usize,
        field(2) as usize,
        field(3) as usize,
        field(4) as usize,
    );
    let activation = Activation::from_code(field(5)).ok_or_else(|| bad("unknown activation"))?;
    let gated = match field(6) {
        0 => false,
        1 => true,
        _ => return Err(bad("gated flag must be 0 or 1")),
    };
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<T>> {
        let mut buf = vec![0u8; rows * cols * 8];
        input
            .read_exact(&mut buf)
            .map_err(|_| bad("truncated weights"))?;
        let values = buf
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
    };
    let mut experts = Vec::with_capacity(n);
    for _ in 0..n {
        let up = read_matrix(d, h)?;
        let gate = if gated {
            Some(read_matrix(d, h)?)
        } else {
            None
        };
        let down = read_matrix(h, d)?;
        experts.push(GatedFfn::new(up, gate, down, activation)?);
    }
    ExpertSet::new(experts, g)
}
