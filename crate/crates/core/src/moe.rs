//! Desk-scale mixture-of-experts layer: softmax router, top-K gating,
//! gated-FFN experts, baseline router regularizers and routing statistics.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::scalar::Scalar;
use crate::shaping::ProbBatch;

/// Elementwise nonlinearity of the expert gate branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    #[serde(alias = "silu")]
    SigmoidLinear,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::SigmoidLinear => x / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::SigmoidLinear => {
                let sig = T::one() / (T::one() + (-x).exp());
                sig * (T::one() + x * (T::one() - sig))
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::SigmoidLinear => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::SigmoidLinear),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Gated feed-forward block `(act(x W_gate) * (x W_up)) W_down`; without a
/// gate projection it is `act(x W_up) W_down`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedFfn<T> {
    pub(crate) w_up: Array2<T>,
    pub(crate) w_gate: Option<Array2<T>>,
    pub(crate) w_down: Array2<T>,
    pub(crate) activation: Activation,
}

/// A dense FFN is the same block an expert is.
pub type DenseFfn<T> = GatedFfn<T>;

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FfnCache<T> {
    up: Array2<T>,
    gate: Option<Array2<T>>,
    hidden: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnGrads<T> {
    pub w_up: Array2<T>,
    pub w_gate: Option<Array2<T>>,
    pub w_down: Array2<T>,
}

impl<T: Scalar> GatedFfn<T> {
    pub fn new(
        w_up: Array2<T>,
        w_gate: Option<Array2<T>>,
        w_down: Array2<T>,
        activation: Activation,
    ) -> Result<Self> {
        let (d, h) = w_up.dim();
        if d == 0 || h == 0 {
            return Err(Error::shape("FFN needs d >= 1 and h >= 1"));
        }
        if let Some(g) = &w_gate {
            if g.dim() != (d, h) {
                return Err(Error::shape(format!(
                    "W_gate is {:?}, W_up is {:?}",
                    g.dim(),
                    (d, h)
                )));
            }
        }
        if w_down.dim() != (h, d) {
            return Err(Error::shape(format!(
                "W_down is {:?}, expected {:?}",
                w_down.dim(),
                (h, d)
            )));
        }
        let ffn = Self {
            w_up,
            w_gate,
            w_down,
            activation,
        };
        if ffn.weights().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::domain("FFN weights must be finite"));
        }
        Ok(ffn)
    }

    /// Normal initialization with standard deviation `scale / sqrt(fan_in)`.
    pub fn random(
        d: usize,
        h: usize,
        gated: bool,
        activation: Activation,
        scale: f64,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let mut draw = |rows: usize, cols: usize| {
            let std = scale / (rows as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || T::lit(std * rng.normal()))
        };
        let w_up = draw(d, h);
        let w_gate = gated.then(|| draw(d, h));
        let w_down = draw(h, d);
        Self::new(w_up, w_gate, w_down, activation)
    }

    pub fn dim(&self) -> usize {
        self.w_up.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_up.ncols()
    }

    pub fn is_gated(&self) -> bool {
        self.w_gate.is_some()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn w_up(&self) -> &Array2<T> {
        &self.w_up
    }

    pub fn w_gate(&self) -> Option<&Array2<T>> {
        self.w_gate.as_ref()
    }

    pub fn w_down(&self) -> &Array2<T> {
        &self.w_down
    }

    /// Weight tensors in serialization order: up, gate (if any), down.
    pub fn weights(&self) -> impl Iterator<Item = &Array2<T>> {
        std::iter::once(&self.w_up)
            .chain(self.w_gate.as_ref())
            .chain(std::iter::once(&self.w_down))
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Array2<T>> {
        std::iter::once(&mut self.w_up)
            .chain(self.w_gate.as_mut())
            .chain(std::iter::once(&mut self.w_down))
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        self.forward_cached(x).1
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, T>) -> (FfnCache<T>, Array2<T>) {
        let up = x.dot(&self.w_up);
        let act = self.activation;
        let (gate, hidden) = match &self.w_gate {
            Some(wg) => {
                let gate = x.dot(wg);
                let mut hidden = gate.mapv(|v| act.apply(v));
                hidden *= &up;
                (Some(gate), hidden)
            }
            None => (None, up.mapv(|v| act.apply(v))),
        };
        let y = hidden.dot(&self.w_down);
        (FfnCache { up, gate, hidden }, y)
    }

    /// Gradients of the weights and of the input for upstream `dy`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        cache: &FfnCache<T>,
        dy: ArrayView2<'_, T>,
    ) -> (FfnGrads<T>, Array2<T>) {
        let act = self.activation;
        let d_down = cache.hidden.t().dot(&dy);
        let d_hidden = dy.dot(&self.w_down.t());
        let (d_up_pre, d_gate_pre) = match &cache.gate {
            Some(gate) => {
                let mut d_up = gate.mapv(|v| act.apply(v));
                d_up *= &d_hidden;
                let mut d_gate = gate.mapv(|v| act.derivative(v));
                d_gate *= &cache.up;
                d_gate *= &d_hidden;
                (d_up, Some(d_gate))
            }
            None => {
                let mut d_up = cache.up.mapv(|v| act.derivative(v));
                d_up *= &d_hidden;
                (d_up, None)
            }
        };
        let mut dx = d_up_pre.dot(&self.w_up.t());
        let d_w_gate = match (&self.w_gate, &d_gate_pre) {
            (Some(wg), Some(dg)) => {
                dx += &dg.dot(&wg.t());
                Some(x.t().dot(dg))
            }
            _ => None,
        };
        let grads = FfnGrads {
            w_up: x.t().dot(&d_up_pre),
            w_gate: d_w_gate,
            w_down: d_down,
        };
        (grads, dx)
    }

    /// Expert built from hidden units `hidden_units`: those columns of the
    /// input projections and those rows of the output projection.
    pub fn shard(&self, hidden_units: &[usize]) -> Result<Self> {
        if hidden_units.is_empty() {
            return Err(Error::shape("empty shard"));
        }
        if let Some(&bad) = hidden_units.iter().find(|&&i| i >= self.hidden()) {
            return Err(Error::Index {
                index: bad,
                len: self.hidden(),
            });
        }
        Self::new(
            self.w_up.select(Axis(1), hidden_units),
            self.w_gate
                .as_ref()
                .map(|g| g.select(Axis(1), hidden_units)),
            self.w_down.select(Axis(0), hidden_units),
            self.activation,
        )
    }

    pub fn shard_range(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.hidden() || range.is_empty() {
            return Err(Error::shape(format!(
                "shard range {range:?} invalid for hidden size {}",
                self.hidden()
            )));
        }
        Self::new(
            self.w_up.slice(s![.., range.clone()]).to_owned(),
            self.w_gate
                .as_ref()
                .map(|g| g.slice(s![.., range.clone()]).to_owned()),
            self.w_down.slice(s![range, ..]).to_owned(),
            self.activation,
        )
    }
}

/// Routed experts plus the granularity they were cut at.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSet<T> {
    experts: Vec<GatedFfn<T>>,
    granularity: usize,
}

impl<T: Scalar> ExpertSet<T> {
    pub fn new(experts: Vec<GatedFfn<T>>, granularity: usize) -> Result<Self> {
        if granularity == 0 {
            return Err(Error::config("granularity must be >= 1"));
        }
        if let Some(first) = experts.first() {
            let shape = (
                first.dim(),
                first.hidden(),
                first.is_gated(),
                first.activation(),
            );
            if experts
                .iter()
                .any(|e| (e.dim(), e.hidden(), e.is_gated(), e.activation()) != shape)
            {
                return Err(Error::shape("experts must share dimensions and activation"));
            }
        }
        Ok(Self {
            experts,
            granularity,
        })
    }

    pub fn empty() -> Self {
        Self {
            experts: Vec::new(),
            granularity: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    pub fn experts(&self) -> &[GatedFfn<T>] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [GatedFfn<T>] {
        &mut self.experts
    }

    pub fn get(&self, i: usize) -> Option<&GatedFfn<T>> {
        self.experts.get(i)
    }
}

/// Router weights `W_g` (d x N); logits are `x W_g`, no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterParams<T> {
    w_g: Array2<T>,
}

impl<T: Scalar> RouterParams<T> {
    pub fn new(w_g: Array2<T>) -> Result<Self> {
        let (d, n) = w_g.dim();
        if d < 1 || n < 2 {
            return Err(Error::shape(format!(
                "router must be d>=1, N>=2, got {d}x{n}"
            )));
        }
        if w_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("router weights must be finite"));
        }
        Ok(Self { w_g })
    }

    pub fn zeros(d: usize, n: usize) -> Result<Self> {
        Self::new(Array2::zeros((d, n)))
    }

    pub fn random(d: usize, n: usize, std: f64, rng: &mut Rng64) -> Result<Self> {
        Self::new(Array2::from_shape_simple_fn((d, n), || {
            T::lit(std * rng.normal())
        }))
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.w_g
    }

    pub fn weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.w_g
    }

    pub fn dim(&self) -> usize {
        self.w_g.nrows()
    }

    pub fn n_experts(&self) -> usize {
        self.w_g.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoEConfig {
    pub n_experts: usize,
    pub top_k: usize,
    #[serde(default)]
    pub n_shared: usize,
    #[serde(default)]
    pub renormalize_gates: bool,
}

impl MoEConfig {
    pub fn new(n_experts: usize, top_k: usize) -> Result<Self> {
        let cfg = Self {
            n_experts,
            top_k,
            n_shared: 0,
            renormalize_gates: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts < 2 {
            return Err(Error::config("need at least 2 experts"));
        }
        if self.top_k < 1 || self.top_k > self.n_experts {
            return Err(Error::config(format!(
                "top_k must be in 1..={}, got {}",
                self.n_experts, self.top_k
            )));
        }
        Ok(())
    }
}

/// Numerically stable softmax of one row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn logsumexp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let p = softmax(row.as_slice().expect("standard layout"));
        row.iter_mut().zip(p).for_each(|(dst, v)| *dst = v);
    }
    probs
}

/// Router logits `tokens W_g` and their row-wise softmax.
pub fn router_forward<T: Scalar>(
    tokens: ArrayView2<'_, T>,
    params: &RouterParams<T>,
) -> Result<(Array2<T>, ProbBatch<T>)> {
    if tokens.ncols() != params.dim() {
        return Err(Error::shape(format!(
            "tokens have {} features, router expects {}",
            tokens.ncols(),
            params.dim()
        )));
    }
    let logits = tokens.dot(&params.w_g);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite router logits".into()));
    }
    let probs = softmax_rows(&logits);
    Ok((logits, ProbBatch::new(probs)?))
}

/// Experts chosen for one token and their gate values.
#[derive(Clone, Debug, PartialEq)]
pub struct TopK<T> {
    /// Highest score first; equal scores keep the lower index first.
    pub indices: Vec<usize>,
    pub gates: Vec<T>,
}

/// Indices of the `k` largest scores, ties toward the lowest index.
pub fn top_k_indices<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() || k == 0 {
        return Err(Error::config(format!(
            "top_k = {k} invalid for {} experts",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).expect("finite scores"));
    order.truncate(k);
    Ok(order)
}

pub fn top_k_select<T: Scalar>(probs: &[T], k: usize, renormalize: bool) -> Result<TopK<T>> {
    select_with_bias(probs, None, k, renormalize)
}

/// Top-K where selection uses `probs + bias` but gates stay the unbiased
/// probabilities.
pub fn select_with_bias<T: Scalar>(
    probs: &[T],
    bias: Option<&[T]>,
    k: usize,
    renormalize: bool,
) -> Result<TopK<T>> {
    let indices = match bias {
        Some(b) => {
            if b.len() != probs.len() {
                return Err(Error::shape("bias length differs from expert count"));
            }
            let scores: Vec<T> = probs.iter().zip(b).map(|(&p, &b)| p + b).collect();
            top_k_indices(&scores, k)?
        }
        None => top_k_indices(probs, k)?,
    };
    let mut gates: Vec<T> = indices.iter().map(|&i| probs[i]).collect();
    if renormalize {
        let sum: T = gates.iter().copied().sum();
        gates.iter_mut().for_each(|g| *g /= sum);
    }
    Ok(TopK { indices, gates })
}

#[derive(Clone, Debug)]
pub struct MoeOutput<T> {
    pub output: Array2<T>,
    pub logits: Array2<T>,
    pub probs: ProbBatch<T>,
    pub selections: Vec<TopK<T>>,
}

/// MoE layer: routed experts weighted by their gates plus every shared
/// expert unweighted.
pub fn moe_forward<T: Scalar>(
    tokens: ArrayView2<'_, T>,
    experts: &ExpertSet<T>,
    shared: &ExpertSet<T>,
    router: &RouterParams<T>,
    config: &MoEConfig,
) -> Result<MoeOutput<T>> {
    moe_forward_biased(tokens, experts, shared, router, config, None)
}

pub fn moe_forward_biased<T: Scalar>(
    tokens: ArrayView2<'_, T>,
    experts: &ExpertSet<T>,
    shared: &ExpertSet<T>,
    router: &RouterParams<T>,
    config: &MoEConfig,
    selection_bias: Option<&[T]>,
) -> Result<MoeOutput<T>> {
    config.validate()?;
    if experts.len() != config.n_experts || router.n_experts() != config.n_experts {
        return Err(Error::shape(format!(
            "config has {} experts, expert set {}, router {}",
            config.n_experts,
            experts.len(),
            router.n_experts()
        )));
    }
    if shared.len() != config.n_shared {
        return Err(Error::shape(format!(
            "config has {} shared experts, got {}",
            config.n_shared,
            shared.len()
        )));
    }
    let d = tokens.ncols();
    if experts
        .experts()
        .iter()
        .chain(shared.experts())
        .any(|e| e.dim() != d)
    {
        return Err(Error::shape(
            "expert dimension differs from token dimension",
        ));
    }
    let (logits, probs) = router_forward(tokens, router)?;
    let selections = probs
        .probs()
        .rows()
        .into_iter()
        .map(|row| {
            select_with_bias(
                row.as_slice().expect("standard layout"),
                selection_bias,
                config.top_k,
                config.renormalize_gates,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut output = Array2::zeros(tokens.raw_dim());
    for (e, routed) in dispatch(&selections, config.n_experts)
        .into_iter()
        .enumerate()
    {
        if routed.is_empty() {
            continue;
        }
        let rows: Vec<usize> = routed.iter().map(|&(t, _)| t).collect();
        let y = experts.experts[e].forward(tokens.select(Axis(0), &rows).view());
        for (out_row, &(t, gate)) in y.rows().into_iter().zip(&routed) {
            output
                .row_mut(t)
                .scaled_add(selections[t].gates[gate], &out_row);
        }
    }
    for s in shared.experts() {
        output += &s.forward(tokens);
    }
    Ok(MoeOutput {
        output,
        logits,
        probs,
        selections,
    })
}

/// Per expert, the `(token, slot)` pairs routed to it in token order.
pub fn dispatch<T>(selections: &[TopK<T>], n_experts: usize) -> Vec<Vec<(usize, usize)>> {
    let mut routed = vec![Vec::new(); n_experts];
    for (t, sel) in selections.iter().enumerate() {
        for (slot, &e) in sel.indices.iter().enumerate() {
            routed[e].push((t, slot));
        }
    }
    routed
}

/// Switch-style routing statistics for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadStats<T> {
    /// Dispatch slots per token that went to each expert; sums to `top_k`.
    pub f: Vec<T>,
    /// Mean router probability per expert; sums to one.
    pub p: Vec<T>,
    /// Raw token counts per expert.
    pub loads: Vec<usize>,
    pub top_k: usize,
}

impl<T: Scalar> LoadStats<T> {
    pub fn from_routing(probs: &Array2<T>, selections: &[TopK<T>]) -> Result<Self> {
        let (t, n) = probs.dim();
        if selections.len() != t || t == 0 {
            return Err(Error::shape("one selection per token required"));
        }
        let top_k = selections[0].indices.len();
        let mut loads = vec![0usize; n];
        for sel in selections {
            if sel.indices.len() != top_k {
                return Err(Error::shape("selections differ in size"));
            }
            for &e in &sel.indices {
                *loads.get_mut(e).ok_or(Error::Index { index: e, len: n })? += 1;
            }
        }
        let tokens = T::from_usize_lossy(t);
        let f = loads
            .iter()
            .map(|&l| T::from_usize_lossy(l) / tokens)
            .collect();
        let p = probs.mean_axis(Axis(0)).expect("t > 0").to_vec();
        Ok(Self { f, p, loads, top_k })
    }

    pub fn n_experts(&self) -> usize {
        self.loads.len()
    }

    pub fn tokens(&self) -> usize {
        self.loads.iter().sum::<usize>() / self.top_k.max(1)
    }
}

/// `N * sum_i (f_i / K) * P_i`; exactly 1 under uniform routing.
pub fn load_balancing_loss<T: Scalar>(stats: &LoadStats<T>) -> T {
    let n = T::from_usize_lossy(stats.n_experts());
    let k = T::from_usize_lossy(stats.top_k);
    let mut acc = T::zero();
    for (&f, &p) in stats.f.iter().zip(&stats.p) {
        acc += f / k * p;
    }
    n * acc
}

/// Gradient of [`load_balancing_loss`] with respect to one token's
/// probability row (dispatch fractions held fixed); identical for every row.
pub fn load_balancing_prob_grad<T: Scalar>(stats: &LoadStats<T>) -> Vec<T> {
    let n = T::from_usize_lossy(stats.n_experts());
    let k = T::from_usize_lossy(stats.top_k);
    let t = T::from_usize_lossy(stats.tokens().max(1));
    stats.f.iter().map(|&f| n * f / (k * t)).collect()
}

/// Router z-loss `(1/T) sum_t logsumexp(logits_t)^2`.
pub fn z_loss<T: Scalar>(logits: &Array2<T>) -> T {
    let t = logits.nrows();
    if t == 0 {
        return T::zero();
    }
    let mut acc = T::zero();
    for row in logits.rows() {
        let lse = logsumexp(row.as_slice().expect("standard layout"));
        acc += lse * lse;
    }
    acc / T::from_usize_lossy(t)
}

/// Gradient of [`z_loss`] with respect to the logits.
pub fn z_loss_grad<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let t = T::from_usize_lossy(logits.nrows().max(1));
    let mut grad = softmax_rows(logits);
    for (mut g, row) in grad.rows_mut().into_iter().zip(logits.rows()) {
        let lse = logsumexp(row.as_slice().expect("standard layout"));
        let scale = T::lit(2.0) * lse / t;
        g.mapv_inplace(|p| p * scale);
    }
    grad
}

/// Auxiliary-loss-free balancing: per-expert selection biases nudged by a
/// fixed step against the load imbalance.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSeekBalancer<T> {
    biases: Vec<T>,
    update_rate: T,
}

impl<T: Scalar> DeepSeekBalancer<T> {
    pub fn new(n_experts: usize, update_rate: T) -> Result<Self> {
        if !(update_rate > T::zero() && update_rate.is_finite()) {
            return Err(Error::config(format!(
                "update rate must be > 0, got {update_rate}"
            )));
        }
        Ok(Self {
            biases: vec![T::zero(); n_experts],
            update_rate,
        })
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    pub fn update_rate(&self) -> T {
        self.update_rate
    }

    /// Bias down by `u` for experts above the mean load, up by `u` below it.
    pub fn update(&self, stats: &LoadStats<T>) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(stats)?;
        Ok(next)
    }

    pub fn update_in_place(&mut self, stats: &LoadStats<T>) -> Result<()> {
        let n = self.biases.len();
        if stats.loads.len() != n {
            return Err(Error::shape("load vector length differs from bias length"));
        }
        let total: usize = stats.loads.iter().sum();
        for (b, &load) in self.biases.iter_mut().zip(&stats.loads) {
            // load > total / n, compared exactly in integers.
            match (load * n).cmp(&total) {
                std::cmp::Ordering::Greater => *b -= self.update_rate,
                std::cmp::Ordering::Less => *b += self.update_rate,
                std::cmp::Ordering::Equal => {}
            }
        }
        Ok(())
    }
}

/// Coefficient of variation (population std / mean) of expert loads.
pub fn cov<T: Scalar>(loads: &[T]) -> Result<T> {
    if loads.is_empty() {
        return Err(Error::domain("cov of an empty load vector"));
    }
    let n = T::from_usize_lossy(loads.len());
    let mean = loads.iter().copied().sum::<T>() / n;
    if mean.is_nan() || mean <= T::zero() {
        return Err(Error::domain("cov requires a positive mean load"));
    }
    let var = loads.iter().map(|&l| (l - mean) * (l - mean)).sum::<T>() / n;
    Ok(var.sqrt() / mean)
}

/// Barycentric to Cartesian coordinates on the triangle
/// `(0,0), (1,0), (1/2, sqrt(3)/2)`.
pub fn simplex_project<T: Scalar>(probs: &Array2<T>) -> Result<Vec<(T, T)>> {
    if probs.ncols() != 3 {
        return Err(Error::shape(format!(
            "simplex projection needs 3 categories, got {}",
            probs.ncols()
        )));
    }
    let half = T::lit(0.5);
    let height = T::lit(3.0).sqrt() * half;
    Ok(probs
        .rows()
        .into_iter()
        .map(|r| (r[1] + half * r[2], height * r[2]))
        .collect())
}

/// Mean of each expert's probability over the rows selected by `rows`.
pub fn mean_mass<T: Scalar>(probs: &Array2<T>, rows: &[usize]) -> Array1<T> {
    if rows.is_empty() {
        return Array1::zeros(probs.ncols());
    }
    probs
        .select(Axis(0), rows)
        .mean_axis(Axis(0))
        .expect("non-empty selection")
}
