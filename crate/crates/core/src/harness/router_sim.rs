//! Desk-scale MoE router study: Gaussian token clusters pushed through a
//! residual stack of upcycled MoE layers, with the router trained under a
//! selectable regularizer and an optional regression objective.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis, Ix2};

use super::adam::AdamState;
use super::config::{ExperimentConfig, ExperimentKind, RegularizerSpec, SimMoeSpec};
use super::grad::softmax_chain_rows;
use super::report::{
    CvmEntry, Histogram, LayerProbs, LossTrace, RoutingDump, RunReport, SimplexSeries,
    SpecializationRow,
};
use crate::error::{Error, Result};
use crate::moe::{
    cov, dispatch, load_balancing_loss, load_balancing_prob_grad, mean_mass, moe_forward_biased,
    simplex_project, z_loss, z_loss_grad, DeepSeekBalancer, ExpertSet, FfnGrads, GatedFfn,
    LoadStats, MoEConfig, MoeOutput, RouterParams,
};
use crate::rng::Rng64;
use crate::shaping::{cvm_distance, dpsl_grad, dpsl_loss, ProbBatch, ShapingConfig, DEFAULT_TAG};
use crate::upcycle::{granular_upcycle, standard_upcycle, UpcycleConfig};

const DEFAULT_TOKENS: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct SimLayer {
    pub router: RouterParams<f64>,
    pub experts: ExpertSet<f64>,
    pub shared: ExpertSet<f64>,
}

#[derive(Clone, Debug, Default)]
struct Regularizers {
    dpsl: Option<ShapingConfig<f64>>,
    load_balance: Option<f64>,
    z_loss: Option<f64>,
    deepseek: Option<f64>,
}

/// Objective and its components for one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub task: f64,
    pub dpsl: f64,
    pub load_balance: f64,
    pub z_loss: f64,
}

impl LossParts {
    pub const COLUMNS: [&'static str; 5] = ["loss", "task", "dpsl", "load_balance", "z_loss"];

    fn row(&self) -> Vec<f64> {
        vec![
            self.total,
            self.task,
            self.dpsl,
            self.load_balance,
            self.z_loss,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub router: Array2<f64>,
    /// Empty unless experts are trained.
    pub experts: Vec<FfnGrads<f64>>,
    pub shared: Vec<FfnGrads<f64>>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossParts,
    pub grads: Vec<LayerGrads>,
    pub outputs: Vec<MoeOutput<f64>>,
    pub stats: Vec<LoadStats<f64>>,
}

#[derive(Clone, Debug)]
pub struct RouterSim {
    moe: MoEConfig,
    train_experts: bool,
    tokens: Array2<f64>,
    tags: Vec<String>,
    source_order: Vec<String>,
    targets: Option<Array2<f64>>,
    layers: Vec<SimLayer>,
    balancers: Vec<DeepSeekBalancer<f64>>,
    regs: Regularizers,
}

fn grad_tensors(g: &FfnGrads<f64>) -> impl Iterator<Item = &Array2<f64>> {
    std::iter::once(&g.w_up)
        .chain(g.w_gate.as_ref())
        .chain(std::iter::once(&g.w_down))
}

impl RouterSim {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        if config.kind != ExperimentKind::RouterSim {
            return Err(Error::config("run_router_sim needs kind `router-sim`"));
        }
        config.validate()?;
        let spec = config.moe_spec();
        let moe = spec.moe_config()?;
        let n = spec.n_experts;
        let d = spec.d_model;

        let mut regs = Regularizers::default();
        for r in &config.regularizers {
            match *r {
                RegularizerSpec::None => {}
                RegularizerSpec::Dpsl { weight } => {
                    let lambda = weight.unwrap_or(config.shaping.lambda);
                    regs.dpsl = Some(config.shaping.to_config::<f64>(n)?.with_lambda(lambda)?);
                }
                RegularizerSpec::LoadBalance { weight } => regs.load_balance = Some(weight),
                RegularizerSpec::ZLoss { weight } => regs.z_loss = Some(weight),
                RegularizerSpec::Deepseek { update_rate } => {
                    regs.deepseek = (update_rate > 0.0).then_some(update_rate)
                }
            }
        }

        let sources = if config.sources.is_empty() {
            vec![super::config::SourceSpec::new(DEFAULT_TAG, DEFAULT_TOKENS)]
        } else {
            config.sources.clone()
        };
        if let Some(shaping) = &regs.dpsl {
            for s in &sources {
                shaping.prior_for(&s.tag)?;
            }
        }

        let mut center_rng = Rng64::with_stream(config.seed, 1);
        let mut token_rng = Rng64::with_stream(config.seed, 2);
        let mut target_rng = Rng64::with_stream(config.seed, 3);
        let total: usize = sources.iter().map(|s| s.count).sum();
        let mut tokens = Array2::zeros((total, d));
        let mut targets = config.task.as_ref().map(|_| Array2::zeros((total, d)));
        let mut tags = Vec::with_capacity(total);
        let mut row = 0;
        for s in &sources {
            let center = match &s.center {
                Some(c) if c.len() != d => {
                    return Err(Error::config(format!(
                        "source `{}` center has {} entries, d_model is {d}",
                        s.tag,
                        c.len()
                    )))
                }
                Some(c) => c.clone(),
                None => (0..d)
                    .map(|_| s.center_scale * center_rng.normal())
                    .collect(),
            };
            let target: Vec<f64> = match &config.task {
                Some(task) => (0..d)
                    .map(|_| task.target_scale * target_rng.normal())
                    .collect(),
                None => Vec::new(),
            };
            for _ in 0..s.count {
                for j in 0..d {
                    tokens[[row, j]] = center[j] + s.std * token_rng.normal();
                }
                if let Some(y) = targets.as_mut() {
                    y.row_mut(row).assign(&ndarray::aview1(&target));
                }
                tags.push(s.tag.clone());
                row += 1;
            }
        }

        let layers = (0..spec.layers)
            .map(|l| build_layer(&spec, config.seed, l))
            .collect::<Result<Vec<_>>>()?;
        let balancers = match regs.deepseek {
            Some(rate) => (0..spec.layers)
                .map(|_| DeepSeekBalancer::new(n, rate))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        Ok(Self {
            moe,
            train_experts: spec.train_experts,
            tokens,
            tags,
            source_order: sources.iter().map(|s| s.tag.clone()).collect(),
            targets,
            layers,
            balancers,
            regs,
        })
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn layers(&self) -> &[SimLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [SimLayer] {
        &mut self.layers
    }

    /// Current selection biases of each layer, if loss-free balancing is on.
    pub fn biases(&self) -> Vec<&[f64]> {
        self.balancers.iter().map(|b| b.biases()).collect()
    }

    /// Forward pass, objective and gradients. With `regularize` false the
    /// regularizers contribute neither loss nor gradient.
    pub fn evaluate(&self, regularize: bool) -> Result<Evaluation> {
        let (t, d) = self.tokens.dim();
        let n = self.moe.n_experts;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = self.tokens.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let bias = self.balancers.get(l).map(|b| b.biases());
            let out = moe_forward_biased(
                h.view(),
                &layer.experts,
                &layer.shared,
                &layer.router,
                &self.moe,
                bias,
            )?;
            let next = &h + &out.output;
            inputs.push(h);
            outputs.push(out);
            h = next;
        }
        let stats = outputs
            .iter()
            .map(|o| LoadStats::from_routing(o.probs.probs(), &o.selections))
            .collect::<Result<Vec<_>>>()?;

        let mut loss = LossParts::default();
        let mut dh = match &self.targets {
            Some(y) => {
                let diff = &h - y;
                let scale = 1.0 / (t * d) as f64;
                loss.task = diff.iter().map(|v| v * v).sum::<f64>() * scale;
                diff * (2.0 * scale)
            }
            None => Array2::zeros((t, d)),
        };

        let layer_weight: f64 = self
            .regs
            .dpsl
            .as_ref()
            .map_or(1.0, |c| c.layer_reduction().weight(self.layers.len()));
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (x, out) = (&inputs[l], &outputs[l]);
            let probs = out.probs.probs();
            let mut dx = dh.clone();
            let mut dgate = vec![vec![0.0; self.moe.top_k]; t];
            let mut expert_grads = Vec::new();
            for (e, routed) in dispatch(&out.selections, n).into_iter().enumerate() {
                let expert = &layer.experts.experts()[e];
                let rows: Vec<usize> = routed.iter().map(|&(tok, _)| tok).collect();
                let xe = x.select(Axis(0), &rows);
                let (cache, y) = expert.forward_cached(xe.view());
                let mut dy = Array2::zeros((rows.len(), d));
                for (i, &(tok, slot)) in routed.iter().enumerate() {
                    let upstream = dh.row(tok);
                    dgate[tok][slot] = upstream.dot(&y.row(i));
                    dy.row_mut(i)
                        .scaled_add(out.selections[tok].gates[slot], &upstream);
                }
                let (g, dxe) = expert.backward(xe.view(), &cache, dy.view());
                for (i, &tok) in rows.iter().enumerate() {
                    dx.row_mut(tok).scaled_add(1.0, &dxe.row(i));
                }
                if self.train_experts {
                    expert_grads.push(g);
                }
            }
            let mut shared_grads = Vec::new();
            for s in layer.shared.experts() {
                let (cache, _) = s.forward_cached(x.view());
                let (g, dxs) = s.backward(x.view(), &cache, dh.view());
                dx += &dxs;
                if self.train_experts {
                    shared_grads.push(g);
                }
            }

            let mut dp = Array2::zeros((t, n));
            for (tok, sel) in out.selections.iter().enumerate() {
                if self.moe.renormalize_gates {
                    let sum: f64 = sel.indices.iter().map(|&e| probs[[tok, e]]).sum();
                    let c: f64 = dgate[tok]
                        .iter()
                        .zip(&sel.gates)
                        .map(|(dg, g)| dg * g)
                        .sum();
                    for (slot, &e) in sel.indices.iter().enumerate() {
                        dp[[tok, e]] += (dgate[tok][slot] - c) / sum;
                    }
                } else {
                    for (slot, &e) in sel.indices.iter().enumerate() {
                        dp[[tok, e]] += dgate[tok][slot];
                    }
                }
            }

            let mut dlogits_extra = None;
            if regularize {
                if let Some(shaping) = &self.regs.dpsl {
                    let batch = ProbBatch::with_tags(probs.clone(), self.tags.clone())?;
                    loss.dpsl += layer_weight * dpsl_loss(&batch, shaping)?;
                    dp.scaled_add(layer_weight, &dpsl_grad(&batch, shaping)?);
                }
                if let Some(w) = self.regs.load_balance {
                    loss.load_balance += w * load_balancing_loss(&stats[l]);
                    let g = load_balancing_prob_grad(&stats[l]);
                    for mut row in dp.rows_mut() {
                        row.iter_mut().zip(&g).for_each(|(v, &g)| *v += w * g);
                    }
                }
                if let Some(w) = self.regs.z_loss {
                    loss.z_loss += w * z_loss(&out.logits);
                    dlogits_extra = Some(z_loss_grad(&out.logits) * w);
                }
            }
            let mut dlogits = softmax_chain_rows(probs, &dp)?;
            if let Some(extra) = dlogits_extra {
                dlogits += &extra;
            }
            let w_g = layer.router.weights();
            dx += &dlogits.dot(&w_g.t());
            grads.push(LayerGrads {
                router: x.t().dot(&dlogits),
                experts: expert_grads,
                shared: shared_grads,
            });
            dh = dx;
        }
        grads.reverse();
        loss.total = loss.task + loss.dpsl + loss.load_balance + loss.z_loss;
        Ok(Evaluation {
            loss,
            grads,
            outputs,
            stats,
        })
    }

    fn update_balancers(&mut self, stats: &[LoadStats<f64>]) -> Result<()> {
        for (b, s) in self.balancers.iter_mut().zip(stats) {
            b.update_in_place(s)?;
        }
        Ok(())
    }
}

fn build_layer(spec: &SimMoeSpec, seed: u64, layer: usize) -> Result<SimLayer> {
    let mut rng = Rng64::with_stream(seed, 100 + layer as u64);
    let dense = GatedFfn::random(
        spec.d_model,
        spec.hidden,
        spec.gated,
        spec.activation,
        1.0,
        &mut rng,
    )?;
    let mut up = UpcycleConfig::new(
        spec.n_experts,
        spec.granularity,
        spec.expert_noise,
        rng.next_u64(),
    );
    up.layout = spec.shard_layout;
    let experts = granular_upcycle(&dense, &up)?;
    let shared = if spec.n_shared > 0 {
        standard_upcycle(
            &dense,
            &UpcycleConfig::new(spec.n_shared, 1, spec.expert_noise, rng.next_u64()),
        )?
    } else {
        ExpertSet::empty()
    };
    let router =
        RouterParams::random(spec.d_model, spec.n_experts, spec.router_init_std, &mut rng)?;
    Ok(SimLayer {
        router,
        experts,
        shared,
    })
}

struct Optimizer {
    routers: Vec<AdamState<Ix2>>,
    /// Per layer, per expert (routed then shared), per weight tensor.
    experts: Vec<Vec<Vec<AdamState<Ix2>>>>,
}

impl Optimizer {
    fn new(sim: &RouterSim, lr: f64) -> Result<Self> {
        let mut routers = Vec::new();
        let mut experts = Vec::new();
        for layer in &sim.layers {
            routers.push(AdamState::new(layer.router.weights().raw_dim(), lr)?);
            if sim.train_experts {
                experts.push(
                    layer
                        .experts
                        .experts()
                        .iter()
                        .chain(layer.shared.experts())
                        .map(|e| {
                            e.weights()
                                .map(|w| AdamState::new(w.raw_dim(), lr))
                                .collect()
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
        Ok(Self { routers, experts })
    }

    fn step(&mut self, sim: &mut RouterSim, grads: &[LayerGrads]) -> Result<()> {
        for (l, (layer, g)) in sim.layers.iter_mut().zip(grads).enumerate() {
            self.routers[l].step(layer.router.weights_mut(), g.router.view())?;
            if let Some(states) = self.experts.get_mut(l) {
                let params = layer
                    .experts
                    .experts_mut()
                    .iter_mut()
                    .chain(layer.shared.experts_mut());
                let expert_grads = g.experts.iter().chain(&g.shared);
                for ((expert, eg), st) in params.zip(expert_grads).zip(states.iter_mut()) {
                    for ((w, gw), s) in expert
                        .weights_mut()
                        .zip(grad_tensors(eg))
                        .zip(st.iter_mut())
                    {
                        s.step(w, gw.view())?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_finite(loss: &LossParts, step: usize) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite loss {} at step {step}",
            loss.total
        )))
    }
}

pub fn run_router_sim(config: &ExperimentConfig) -> Result<RunReport> {
    let mut sim = RouterSim::new(config)?;
    let mut opt = Optimizer::new(&sim, config.lr())?;
    let mut trace = LossTrace::new(&LossParts::COLUMNS);
    for step in 0..config.steps() {
        let active = config.regularizers_active(step);
        let ev = sim.evaluate(active)?;
        check_finite(&ev.loss, step)?;
        trace.push(ev.loss.row());
        opt.step(&mut sim, &ev.grads)?;
        if active {
            sim.update_balancers(&ev.stats)?;
        }
    }
    let last = config.steps();
    let ev = sim.evaluate(config.regularizers_active(last))?;
    check_finite(&ev.loss, last)?;

    let mut report = RunReport::empty(config.clone());
    report.loss = trace;
    report.summary.insert("final_loss".into(), ev.loss.total);
    report
        .summary
        .insert("final_task_loss".into(), ev.loss.task);
    summarize(&sim, &ev, config, &mut report)?;
    Ok(report)
}

/// Population standard deviation of each token's largest routing probability.
pub fn max_prob_std(probs: &Array2<f64>) -> f64 {
    let maxes: Vec<f64> = probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let n = maxes.len() as f64;
    let mean = maxes.iter().sum::<f64>() / n;
    (maxes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fraction of all routing probabilities within `width` of `1/N`.
pub fn near_uniform_fraction(probs: &Array2<f64>, width: f64) -> f64 {
    let uniform = 1.0 / probs.ncols() as f64;
    let hits = probs
        .iter()
        .filter(|&&p| (p - uniform).abs() <= width)
        .count();
    hits as f64 / probs.len() as f64
}

fn summarize(
    sim: &RouterSim,
    ev: &Evaluation,
    config: &ExperimentConfig,
    report: &mut RunReport,
) -> Result<()> {
    let n = sim.moe.n_experts;
    let mut by_tag: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, tag) in sim.tags.iter().enumerate() {
        by_tag.entry(tag.as_str()).or_default().push(i);
    }
    let groups = config.shaping.modality.as_ref().map(|m| &m.groups);
    let target = sim
        .regs
        .dpsl
        .as_ref()
        .and_then(|c| c.priors().get(DEFAULT_TAG));
    let last = sim.layers.len() - 1;
    let mut worst_cov = 0.0f64;

    for (l, (out, stats)) in ev.outputs.iter().zip(&ev.stats).enumerate() {
        let probs = out.probs.probs();
        let loads: Vec<f64> = stats.loads.iter().map(|&c| c as f64).collect();
        let c = cov(&loads)?;
        worst_cov = worst_cov.max(c);
        report.cov.push(c);
        let s = &mut report.summary;
        s.insert(format!("cov_l{l}"), c);
        s.insert(format!("max_prob_std_l{l}"), max_prob_std(probs));
        s.insert(
            format!("near_uniform_fraction_l{l}"),
            near_uniform_fraction(probs, 0.05),
        );

        for e in 0..n {
            let column = probs.column(e).to_vec();
            let marginal = target.map(|p| p.marginal(e)).transpose()?;
            report.histograms.push(Histogram::new(
                &format!("layer{l}"),
                e,
                &column,
                config.histogram_bins,
                marginal.as_ref(),
            )?);
        }

        for tag in &sim.source_order {
            let rows = &by_tag[tag.as_str()];
            let mass = mean_mass(probs, rows).to_vec();
            if let Some(groups) = groups {
                for (name, experts) in groups {
                    let m: f64 = experts.iter().map(|&e| mass[e]).sum();
                    report
                        .summary
                        .insert(format!("group_mass_l{l}_{tag}_{name}"), m);
                }
            }
            report.specialization.push(SpecializationRow {
                layer: l,
                source: tag.clone(),
                mass,
            });
            if let Some(shaping) = &sim.regs.dpsl {
                let eps = shaping.clamp_eps();
                let sub = probs.select(Axis(0), rows);
                for (e, params) in shaping.prior_for(tag)?.marginals().iter().enumerate() {
                    let clamped: Vec<f64> = sub
                        .column(e)
                        .iter()
                        .map(|v| v.clamp(eps, 1.0 - eps))
                        .collect();
                    report.cvm.push(CvmEntry {
                        layer: l,
                        source: tag.clone(),
                        category: e,
                        distance: cvm_distance(&clamped, params)?,
                    });
                }
            }
            if l == last && n == 3 {
                report.simplex.push(SimplexSeries {
                    source: tag.clone(),
                    points: simplex_project(&probs.select(Axis(0), rows))?,
                });
            }
        }

        report.final_probs.push(LayerProbs {
            layer: l,
            batch: ProbBatch::with_tags(probs.clone(), sim.tags.clone())?,
        });
        report.routing.push(RoutingDump {
            layer: l,
            tags: sim.tags.clone(),
            probs: probs.clone(),
            selected: out.selections.iter().map(|s| s.indices.clone()).collect(),
        });
    }
    report.summary.insert("cov_max".into(), worst_cov);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(regularizers: &str, renormalize: bool, train: bool) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"kind": "router-sim", "seed": 5, "steps": 20, "lr": 0.01,
                "shaping": {{"lambda": 0.1, "priors": {{"default": [1.5, 1.5, 1.5, 1.5]}}}},
                "moe": {{"n_experts": 4, "top_k": 2, "d_model": 4, "hidden": 8, "layers": 2,
                         "n_shared": 1, "router_init_std": 0.5, "expert_noise": 0.1,
                         "renormalize_gates": {renormalize}, "train_experts": {train}}},
                "sources": [{{"tag": "a", "count": 30}}, {{"tag": "b", "count": 30}}],
                "task": {{"target_scale": 1.0}},
                "regularizers": {regularizers}}}"#
        ))
        .unwrap()
    }

    const ALL: &str =
        r#"[{"kind": "dpsl"}, {"kind": "load-balance"}, {"kind": "z-loss", "weight": 0.01}]"#;

    fn check_router_grads(renormalize: bool) {
        let sim = RouterSim::new(&small(ALL, renormalize, false)).unwrap();
        let ev = sim.evaluate(true).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for l in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let probe = |delta: f64| {
                        let mut s = sim.clone();
                        s.layers_mut()[l].router.weights_mut()[[i, j]] += delta;
                        s.evaluate(true).unwrap().loss.total
                    };
                    let fd = (probe(h) - probe(-h)) / (2.0 * h);
                    let an = ev.grads[l].router[[i, j]];
                    worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
                }
            }
        }
        assert!(worst < 1e-4, "renormalize={renormalize}: {worst}");
    }

    #[test]
    fn router_gradient_matches_finite_differences() {
        check_router_grads(false);
        check_router_grads(true);
    }

    #[test]
    fn expert_gradient_matches_finite_differences() {
        let sim = RouterSim::new(&small("[]", false, true)).unwrap();
        let ev = sim.evaluate(true).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for e in [0, 3] {
                let g = &ev.grads[l].experts[e];
                for (t, grad) in grad_tensors(g).enumerate() {
                    let probe = |delta: f64| {
                        let mut s = sim.clone();
                        let w = s.layers_mut()[l].experts.experts_mut()[e]
                            .weights_mut()
                            .nth(t)
                            .unwrap();
                        w[[1, 2]] += delta;
                        s.evaluate(true).unwrap().loss.total
                    };
                    let fd = (probe(h) - probe(-h)) / (2.0 * h);
                    let an = grad[[1, 2]];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-4 * an.abs(),
                        "l{l} e{e} t{t}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_weight_regularizers_change_nothing() {
        let base = run_router_sim(&small("[]", false, true)).unwrap();
        for regs in [
            r#"[{"kind": "dpsl", "weight": 0}]"#,
            r#"[{"kind": "load-balance", "weight": 0}]"#,
            r#"[{"kind": "z-loss", "weight": 0}]"#,
            r#"[{"kind": "deepseek", "update_rate": 0}]"#,
        ] {
            let r = run_router_sim(&small(regs, false, true)).unwrap();
            assert_eq!(r.final_probs, base.final_probs, "{regs}");
            assert_eq!(r.loss.totals(), base.loss.totals(), "{regs}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small(ALL, false, true);
        assert_eq!(run_router_sim(&cfg).unwrap(), run_router_sim(&cfg).unwrap());
    }

    #[test]
    fn untrained_router_without_objective() {
        let mut cfg = small("[]", false, false);
        cfg.task = None;
        let sim = RouterSim::new(&cfg).unwrap();
        let report = run_router_sim(&cfg).unwrap();
        let probs = crate::moe::softmax_rows(&sim.tokens().dot(sim.layers()[0].router.weights()));
        assert_eq!(report.final_probs[0].batch.probs(), &probs);
        assert!(report.loss.totals().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deepseek_biases_move() {
        let mut cfg = small(
            r#"[{"kind": "deepseek", "update_rate": 0.01}]"#,
            false,
            false,
        );
        cfg.steps = Some(3);
        let mut sim = RouterSim::new(&cfg).unwrap();
        let ev = sim.evaluate(true).unwrap();
        sim.update_balancers(&ev.stats).unwrap();
        assert!(sim.biases().iter().all(|b| b.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn regularizer_schedule() {
        let mut cfg = small(ALL, false, false);
        cfg.regularizer_steps = Some(5);
        let report = run_router_sim(&cfg).unwrap();
        assert!(report.loss.values[4][2] > 0.0);
        assert_eq!(report.loss.values[5][2], 0.0);
    }

    #[test]
    fn report_contents() {
        let report = run_router_sim(&small(ALL, false, false)).unwrap();
        assert_eq!(report.loss.len(), 20);
        assert_eq!(report.cov.len(), 2);
        assert_eq!(report.histograms.len(), 8);
        assert_eq!(report.specialization.len(), 4);
        assert_eq!(report.cvm.len(), 16);
        assert_eq!(report.routing[0].selected.len(), 60);
        assert!(report.simplex.is_empty());
        for lp in &report.final_probs {
            for row in lp.batch.probs().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_errors() {
        let mut cfg = small(ALL, false, false);
        cfg.shaping.priors.clear();
        cfg.shaping.priors.insert(
            "a".into(),
            crate::dirichlet::PriorSpec::Explicit(vec![1.0; 4]),
        );
        assert!(matches!(RouterSim::new(&cfg), Err(Error::MissingPrior(_))));
        let mut cfg = small("[]", false, false);
        cfg.sources[0].center = Some(vec![0.0; 3]);
        assert!(matches!(RouterSim::new(&cfg), Err(Error::Config(_))));
        let mut cfg = small("[]", false, false);
        cfg.kind = ExperimentKind::ShapeToy;
        assert!(RouterSim::new(&cfg).is_err());
    }

    #[test]
    fn statistics() {
        let probs = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.9, 0.1]).unwrap();
        assert!((max_prob_std(&probs) - 0.2).abs() < 1e-15);
        assert_eq!(near_uniform_fraction(&probs, 0.05), 0.5);
    }
}
