//! Sequence log-likelihood, prediction losses and the training objective.
//!
//! For a sequence `t_1 < ... < t_L` the log-likelihood is
//!
//! ```text
//! l(S) = sum_{j=2}^{L} log lambda_{c_j}(t_j)  -  integral_{t_1}^{t_L} lambda(t) dt
//! ```
//!
//! where `lambda_{c_j}(t_j)` is evaluated on the interval anchored at
//! `t_{j-1}` (the intensity in force when event `j` arrived), so an event never
//! scores itself. The first event has no history and is not scored.
//!
//! The integral is estimated per interval either by Monte Carlo with uniform
//! draws (unbiased; draws are constants under differentiation) or by the
//! trapezoidal rule on the interval endpoints.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::graph::RelationalGraph;
use crate::intensity::{history_scores, intensity_at, IntensityVars};
use crate::model::{Bound, Thp};
use crate::rng::rng_for;
use crate::sequence::EventSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    MonteCarlo,
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodConfig {
    pub estimator: Estimator,
    /// Uniform draws per inter-event interval for the Monte Carlo estimator.
    pub mc_samples: usize,
    /// Weight `mu` of the graph regulariser (structured models).
    pub graph_weight: f64,
    /// Score events with their own component's intensity
    /// (`lambda_{k_j}`, or `lambda_{k_j, v_j}`) rather than the total.
    pub score_marks: bool,
    /// Multipliers on the type and time prediction losses.
    pub type_weight: f64,
    pub time_weight: f64,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            estimator: Estimator::MonteCarlo,
            mc_samples: 20,
            graph_weight: 0.01,
            score_marks: true,
            type_weight: 1.0,
            time_weight: 1.0,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        if !(self.graph_weight >= 0.0) {
            return Err(Error::InvalidConfig("graph_weight must be non-negative".into()));
        }
        if !(self.type_weight >= 0.0 && self.time_weight >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

fn require_scored(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        Err(Error::TooShort { len: times.len() })
    } else {
        Ok(())
    }
}

/// `sum_{j>=2} log lambda(t_j)` with each event scored on the interval
/// anchored at the previous event. `marks` selects the component per event;
/// `None` scores the total intensity.
pub fn event_term(
    tape: &mut Tape,
    history: Var,
    p: IntensityVars,
    times: &[f64],
    marks: Option<&[usize]>,
) -> Result<Var> {
    require_scored(times)?;
    let l = times.len();
    let anchors: Vec<usize> = (0..l - 1).collect();
    let lam = intensity_at(tape, history, p, &anchors, &times[..l - 1], &times[1..])?;
    let picked = match marks {
        Some(m) => tape.pick_cols(lam, &m[1..])?,
        None => tape.row_sum(lam)?,
    };
    let logs = tape.log(picked)?;
    tape.sum(logs)
}

/// Uniform draws for the Monte Carlo estimator, `n` per interval, grouped by
/// interval.
pub fn draw_mc_samples<R: Rng + ?Sized>(times: &[f64], n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len().saturating_sub(1) * n);
    for w in times.windows(2) {
        for _ in 0..n {
            out.push(w[0] + (w[1] - w[0]) * rng.gen::<f64>());
        }
    }
    out
}

/// Monte Carlo estimate `sum_j (t_j - t_{j-1}) mean_i lambda(u_i)` from
/// given draws (`n` per interval, as produced by [`draw_mc_samples`]).
pub fn nonevent_mc_with_samples(
    tape: &mut Tape,
    history: Var,
    p: IntensityVars,
    times: &[f64],
    samples: &[f64],
    n: usize,
) -> Result<Var> {
    require_scored(times)?;
    let intervals = times.len() - 1;
    if n == 0 || samples.len() != intervals * n {
        return Err(Error::Shape {
            op: "nonevent_mc",
            lhs: [intervals, n],
            rhs: [samples.len(), 1],
        });
    }
    let mut anchors = Vec::with_capacity(samples.len());
    let mut anchor_times = Vec::with_capacity(samples.len());
    let mut weights = Vec::with_capacity(samples.len());
    for a in 0..intervals {
        let gap = times[a + 1] - times[a];
        for _ in 0..n {
            anchors.push(a);
            anchor_times.push(times[a]);
            weights.push(gap / n as f64);
        }
    }
    let lam = intensity_at(tape, history, p, &anchors, &anchor_times, samples)?;
    let total = tape.row_sum(lam)?;
    let weighted = tape.mul_const(total, &Tensor::column_vector(weights))?;
    tape.sum(weighted)
}

/// Monte Carlo estimate with fresh draws from `rng`.
pub fn nonevent_mc<R: Rng + ?Sized>(
    tape: &mut Tape,
    history: Var,
    p: IntensityVars,
    times: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Var> {
    let samples = draw_mc_samples(times, n, rng);
    nonevent_mc_with_samples(tape, history, p, times, &samples, n)
}

/// Trapezoidal estimate `sum_j (t_j - t_{j-1}) / 2 (lambda(t_{j-1}) + lambda(t_j^-))`,
/// both endpoints on the interval anchored at `t_{j-1}`.
pub fn nonevent_trapezoidal(tape: &mut Tape, history: Var, p: IntensityVars, times: &[f64]) -> Result<Var> {
    require_scored(times)?;
    let intervals = times.len() - 1;
    let mut anchors = Vec::with_capacity(2 * intervals);
    let mut anchor_times = Vec::with_capacity(2 * intervals);
    let mut queries = Vec::with_capacity(2 * intervals);
    let mut weights = Vec::with_capacity(2 * intervals);
    for a in 0..intervals {
        let half = (times[a + 1] - times[a]) / 2.0;
        for q in [times[a], times[a + 1]] {
            anchors.push(a);
            anchor_times.push(times[a]);
            queries.push(q);
            weights.push(half);
        }
    }
    let lam = intensity_at(tape, history, p, &anchors, &anchor_times, &queries)?;
    let total = tape.row_sum(lam)?;
    let weighted = tape.mul_const(total, &Tensor::column_vector(weights))?;
    tape.sum(weighted)
}

/// Cross-entropy `sum_j -log softmax(logits_j)[targets_j]`, via log-sum-exp.
pub fn type_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_cols(ls, targets)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0)
}

/// Squared error `sum_j (target_j - pred_j)^2` for an `n x 1` prediction.
pub fn time_loss(tape: &mut Tape, predicted: Var, targets: &[f64]) -> Result<Var> {
    let t = tape.constant(Tensor::column_vector(targets.to_vec()))?;
    let d = tape.sub(t, predicted)?;
    let sq = tape.mul(d, d)?;
    tape.sum(sq)
}

/// Graph regulariser: for each metric `Omega` and all vertex pairs `j <= k`,
/// `-log(1 + exp(s_jk)) + 1{(j,k) in E} s_jk` with `s_jk = e_j^T Omega e_k`,
/// averaged over the metrics. This is the Bernoulli log-likelihood of the
/// adjacency indicators under logits `s_jk`.
pub fn graph_regularizer(tape: &mut Tape, vertex_emb: Var, omegas: &[Var], graph: &RelationalGraph) -> Result<Var> {
    let nv = tape.value(vertex_emb).rows();
    if graph.num_vertices() != nv {
        return Err(Error::IndexOutOfRange {
            what: "graph vertex",
            position: 0,
            index: graph.num_vertices(),
            bound: nv + 1,
        });
    }
    if omegas.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let upper = Tensor::from_fn(nv, nv, |j, k| if j <= k { 1.0 } else { 0.0 });
    let edges = Tensor::from_fn(nv, nv, |j, k| if j < k && graph.has_edge(j, k) { 1.0 } else { 0.0 });
    let mut terms = Vec::with_capacity(omegas.len());
    for &om in omegas {
        let left = tape.matmul(vertex_emb, om)?;
        let s = tape.matmul_nt(left, vertex_emb)?;
        let sp = tape.softplus_fixed(s, 1.0)?;
        let sp = tape.mul_const(sp, &upper)?;
        let sp = tape.sum(sp)?;
        let on_edges = tape.mul_const(s, &edges)?;
        let on_edges = tape.sum(on_edges)?;
        terms.push(tape.sub(on_edges, sp)?);
    }
    let cat = tape.concat_cols(&terms)?;
    tape.mean(cat)
}

/// Where the Monte Carlo draws come from.
pub enum McDraws<'a> {
    Rng(&'a mut ChaCha8Rng),
    /// Frozen draws, `mc_samples` per interval.
    Fixed(&'a [f64]),
}

/// Tape variables of one sequence's objective pieces.
#[derive(Debug, Clone, Copy)]
pub struct SequenceTerms {
    pub event: Var,
    pub nonevent: Var,
    pub type_loss: Var,
    pub time_loss: Var,
    pub scored: usize,
}

/// Component index per event for the event term.
pub fn event_components(model: &Thp, seq: &EventSequence) -> Vec<usize> {
    seq.events()
        .iter()
        .map(|e| model.config.component(e.k, e.v))
        .collect()
}

/// Records one sequence's likelihood terms and prediction losses.
///
/// The sequence is shifted to `min_time` first. Dropout is active iff
/// `dropout_rng` is given.
pub fn sequence_terms(
    tape: &mut Tape,
    model: &Thp,
    bound: &Bound,
    seq: &EventSequence,
    cfg: &LikelihoodConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
    mc: McDraws<'_>,
) -> Result<SequenceTerms> {
    let seq = seq.shifted_positive(model.config.min_time);
    let times = seq.times();
    require_scored(&times)?;
    let l = times.len();

    let enc = encode(tape, model, bound, &seq, model.config.graph_attention, dropout_rng)?;
    let p = IntensityVars::bind(model, bound);
    let history = history_scores(tape, enc.hidden, p)?;

    let marks = event_components(model, &seq);
    let event = event_term(tape, history, p, &times, cfg.score_marks.then_some(marks.as_slice()))?;
    let nonevent = match cfg.estimator {
        Estimator::Trapezoidal => nonevent_trapezoidal(tape, history, p, &times)?,
        Estimator::MonteCarlo => match mc {
            McDraws::Rng(rng) => nonevent_mc(tape, history, p, &times, cfg.mc_samples, rng)?,
            McDraws::Fixed(s) => nonevent_mc_with_samples(tape, history, p, &times, s, cfg.mc_samples)?,
        },
    };

    let anchors: Vec<usize> = (0..l - 1).collect();
    let h_prev = tape.gather_rows(enc.hidden, &anchors)?;
    let logits = tape.matmul(h_prev, bound.var(model.layout.w_type))?;
    let type_targets: Vec<usize> = seq.events()[1..].iter().map(|e| e.k).collect();
    let type_l = type_loss(tape, logits, &type_targets)?;
    let time_pred = tape.matmul(h_prev, bound.var(model.layout.w_time))?;
    let head = model.config.time_head;
    let time_targets: Vec<f64> = times.windows(2).map(|w| head.target(w[0], w[1])).collect();
    let time_l = time_loss(tape, time_pred, &time_targets)?;

    Ok(SequenceTerms {
        event,
        nonevent,
        type_loss: type_l,
        time_loss: time_l,
        scored: l - 1,
    })
}

/// Scalar summary of an objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Sum of log-intensities at scored events.
    pub event_ll: f64,
    /// Estimated integral of the total intensity.
    pub nonevent: f64,
    pub type_loss: f64,
    pub time_loss: f64,
    /// Graph regulariser value (0 for plain models).
    pub graph_reg: f64,
    /// `-(event_ll - nonevent) + type_loss + time_loss - mu * graph_reg`,
    /// with the configured loss weights applied.
    pub total: f64,
    pub scored_events: usize,
}

impl LossBreakdown {
    pub fn loglik(&self) -> f64 {
        self.event_ll - self.nonevent
    }

    /// Log-likelihood per scored event, in nats.
    pub fn per_event_ll(&self) -> f64 {
        if self.scored_events == 0 {
            0.0
        } else {
            self.loglik() / self.scored_events as f64
        }
    }

    /// Adds another breakdown's sums (graph terms included).
    pub fn accumulate(&mut self, o: &LossBreakdown) {
        self.event_ll += o.event_ll;
        self.nonevent += o.nonevent;
        self.type_loss += o.type_loss;
        self.time_loss += o.time_loss;
        self.graph_reg += o.graph_reg;
        self.total += o.total;
        self.scored_events += o.scored_events;
    }
}

/// Objective value and, optionally, its gradient per parameter.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub grads: Option<Vec<Tensor>>,
}

/// Adds `src` into `acc` parameter by parameter.
pub fn add_grads(acc: &mut [Tensor], src: &[Tensor]) {
    for (a, s) in acc.iter_mut().zip(src) {
        for (x, y) in a.data_mut().iter_mut().zip(s.data()) {
            *x += y;
        }
    }
}

/// Seeds for one sequence's stochastic pieces.
#[derive(Debug, Clone, Copy)]
pub struct SequenceSeeds {
    /// Dropout is on iff this is set.
    pub dropout: Option<u64>,
    pub mc: u64,
}

/// `-l(S) + L_type(S) + L_time(S)` for one sequence.
pub fn sequence_objective(
    model: &Thp,
    seq: &EventSequence,
    cfg: &LikelihoodConfig,
    seeds: SequenceSeeds,
    want_grads: bool,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let mut mc_rng = rng_for(seeds.mc, &[]);
    let mut drop_rng = seeds.dropout.map(|s| rng_for(s, &[]));
    let terms = sequence_terms(
        &mut tape,
        model,
        &bound,
        seq,
        cfg,
        drop_rng.as_mut(),
        McDraws::Rng(&mut mc_rng),
    )?;
    finish(&mut tape, model, &bound, terms, cfg, want_grads)
}

/// Combines recorded terms into the minimisation objective and optionally
/// back-propagates it.
pub fn finish(
    tape: &mut Tape,
    model: &Thp,
    bound: &Bound,
    terms: SequenceTerms,
    cfg: &LikelihoodConfig,
    want_grads: bool,
) -> Result<Evaluation> {
    let ll = tape.sub(terms.event, terms.nonevent)?;
    let neg = tape.scale(ll, -1.0)?;
    let type_l = tape.scale(terms.type_loss, cfg.type_weight)?;
    let time_l = tape.scale(terms.time_loss, cfg.time_weight)?;
    let with_type = tape.add(neg, type_l)?;
    let total = tape.add(with_type, time_l)?;
    let breakdown = LossBreakdown {
        event_ll: tape.value(terms.event).item(),
        nonevent: tape.value(terms.nonevent).item(),
        type_loss: tape.value(terms.type_loss).item(),
        time_loss: tape.value(terms.time_loss).item(),
        graph_reg: 0.0,
        total: tape.value(total).item(),
        scored_events: terms.scored,
    };
    let grads = if want_grads {
        tape.backward(total)?;
        Some(bound.grads(tape, &model.store))
    } else {
        None
    };
    Ok(Evaluation { breakdown, grads })
}

/// `-mu * L_graph` and its gradient; the breakdown carries `L_graph` in
/// `graph_reg`.
pub fn graph_objective(model: &Thp, graph: &RelationalGraph, weight: f64, want_grads: bool) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let ve = model
        .layout
        .vertex_emb
        .ok_or_else(|| Error::InvalidConfig("graph regulariser needs a structured model".into()))?;
    let omegas: Vec<Var> = model.omegas().iter().map(|id| bound.var(*id)).collect();
    let reg = graph_regularizer(&mut tape, bound.var(ve), &omegas, graph)?;
    let total = tape.scale(reg, -weight)?;
    let breakdown = LossBreakdown {
        graph_reg: tape.value(reg).item(),
        total: tape.value(total).item(),
        ..LossBreakdown::default()
    };
    let grads = if want_grads {
        tape.backward(total)?;
        Some(bound.grads(&tape, &model.store))
    } else {
        None
    };
    Ok(Evaluation { breakdown, grads })
}

/// `sum_i [-l(S_i) + L_type(S_i) + L_time(S_i)] - mu L_graph` over a batch.
///
/// Sequence `i` draws its Monte Carlo samples from a stream derived from
/// `(seed, i)`; dropout is off.
pub fn total_objective(
    model: &Thp,
    seqs: &[EventSequence],
    cfg: &LikelihoodConfig,
    graph: Option<&RelationalGraph>,
    seed: u64,
    want_grads: bool,
) -> Result<Evaluation> {
    if seqs.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut breakdown = LossBreakdown::default();
    let mut grads: Option<Vec<Tensor>> = None;
    let mut merge = |ev: Evaluation, breakdown: &mut LossBreakdown| {
        breakdown.accumulate(&ev.breakdown);
        if let Some(g) = ev.grads {
            match grads.as_mut() {
                Some(acc) => add_grads(acc, &g),
                None => grads = Some(g),
            }
        }
    };
    for (i, seq) in seqs.iter().enumerate() {
        let seeds = SequenceSeeds {
            dropout: None,
            mc: crate::rng::derive_seed(seed, &[i as u64]),
        };
        merge(sequence_objective(model, seq, cfg, seeds, want_grads)?, &mut breakdown);
    }
    if let (Some(g), true) = (graph, model.config.is_structured()) {
        merge(graph_objective(model, g, cfg.graph_weight, want_grads)?, &mut breakdown);
    }
    Ok(Evaluation { breakdown, grads })
}

/// Log-likelihood of one sequence (dropout off) with its scored-event count.
pub fn sequence_loglik(model: &Thp, seq: &EventSequence, cfg: &LikelihoodConfig, seed: u64) -> Result<LossBreakdown> {
    let seeds = SequenceSeeds { dropout: None, mc: seed };
    Ok(sequence_objective(model, seq, cfg, seeds, false)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use alloc::vec;
    use rand::SeedableRng;

    /// Intensity parameters that make every component constant `c`:
    /// `alpha = w = 0`, `b = softplus^{-1}(c)` at `beta = 1`.
    fn constant_vars(tape: &mut Tape, m: usize, comps: usize, c: f64) -> (Var, IntensityVars) {
        let b = (c.exp() - 1.0).ln();
        let h = tape.constant(Tensor::filled(6, m, 0.3)).unwrap();
        let vars = IntensityVars {
            alpha: tape.leaf(Tensor::zeros(1, comps)).unwrap(),
            w: tape.leaf(Tensor::zeros(m, comps)).unwrap(),
            b: tape.leaf(Tensor::filled(1, comps, b)).unwrap(),
            log_beta: tape.leaf(Tensor::zeros(1, comps)).unwrap(),
        };
        let hist = history_scores(tape, h, vars).unwrap();
        (hist, vars)
    }

    #[test]
    fn constant_intensity_event_term() {
        let mut t = Tape::new();
        let (hist, vars) = constant_vars(&mut t, 2, 1, 1.7);
        let times = [0.5, 1.0, 2.5];
        let e = event_term(&mut t, hist, vars, &times, Some(&[0, 0, 0])).unwrap();
        assert!((t.value(e).item() - 2.0 * 1.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_intensity_event_term_is_zero() {
        let mut t = Tape::new();
        let (hist, vars) = constant_vars(&mut t, 2, 1, 1.0);
        let e = event_term(&mut t, hist, vars, &[0.5, 1.0, 2.5, 3.0], None).unwrap();
        assert!(t.value(e).item().abs() < 1e-12);
    }

    #[test]
    fn single_event_is_too_short() {
        let mut t = Tape::new();
        let (hist, vars) = constant_vars(&mut t, 2, 1, 1.0);
        assert_eq!(event_term(&mut t, hist, vars, &[0.5], None).unwrap_err(), Error::TooShort { len: 1 });
    }

    #[test]
    fn constant_intensity_integrals_exact() {
        let times = [0.5, 1.0, 2.5, 2.75, 4.0, 6.0];
        for c in [0.3, 1.0, 4.2] {
            let mut t = Tape::new();
            let (hist, vars) = constant_vars(&mut t, 2, 3, c);
            let trap = nonevent_trapezoidal(&mut t, hist, vars, &times).unwrap();
            let want = 3.0 * c * (6.0 - 0.5);
            assert!((t.value(trap).item() - want).abs() < 1e-12 * want);
            for (n, seed) in [(1usize, 0u64), (7, 1), (50, 2)] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mc = nonevent_mc(&mut t, hist, vars, &times, n, &mut rng).unwrap();
                assert!((t.value(mc).item() - want).abs() < 1e-12 * want);
            }
        }
    }

    #[test]
    fn type_loss_cases() {
        let mut t = Tape::new();
        // effectively one-hot predictions
        let logits = t.constant(Tensor::from_vec(2, 3, vec![800.0, 0.0, 0.0, 0.0, 0.0, 800.0]).unwrap()).unwrap();
        let l = type_loss(&mut t, logits, &[0, 2]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let uniform = t.constant(Tensor::zeros(2, 4)).unwrap();
        let l = type_loss(&mut t, uniform, &[1, 3]).unwrap();
        assert!((t.value(l).item() - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn type_loss_random_matches_scalar_nll() {
        let raw = [0.3, -1.2, 2.0, 0.5, 0.1, -0.4];
        let mut t = Tape::new();
        let logits = t.constant(Tensor::from_vec(2, 3, raw.to_vec()).unwrap()).unwrap();
        let l = type_loss(&mut t, logits, &[2, 0]).unwrap();
        let nll = |row: &[f64], k: usize| {
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            -(row[k].exp() / z).ln()
        };
        let want = nll(&raw[0..3], 2) + nll(&raw[3..6], 0);
        assert!((t.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn time_loss_cases() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::column_vector(vec![1.0, 2.0, 3.0])).unwrap();
        let l = time_loss(&mut t, p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let l = time_loss(&mut t, p, &[1.5, 2.5, 3.5]).unwrap();
        assert_eq!(t.value(l).item(), 3.0 * 0.25);
        let l = time_loss(&mut t, p, &[0.0, 4.0, 2.0]).unwrap();
        assert_eq!(t.value(l).item(), 1.0 + 4.0 + 1.0);
    }

    #[test]
    fn graph_regularizer_zero_metric() {
        let mut t = Tape::new();
        let e = t.leaf(Tensor::filled(4, 3, 0.7)).unwrap();
        let om = t.leaf(Tensor::zeros(3, 3)).unwrap();
        let g = RelationalGraph::path(4);
        let r = graph_regularizer(&mut t, e, &[om], &g).unwrap();
        let want = -(4.0 * 5.0 / 2.0) * core::f64::consts::LN_2;
        assert!((t.value(r).item() - want).abs() < 1e-12);
    }

    #[test]
    fn graph_regularizer_saturates_on_edge() {
        // two vertices, one edge; only the off-diagonal logit is large
        let g = RelationalGraph::new(2, [(0, 1)]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for s in [1.0, 5.0, 20.0, 40.0] {
            let mut t = Tape::new();
            let e = t.constant(Tensor::identity(2)).unwrap();
            let om = t.constant(Tensor::from_vec(2, 2, vec![-60.0, s, s, -60.0]).unwrap()).unwrap();
            let r = graph_regularizer(&mut t, e, &[om], &g).unwrap();
            let r = t.value(r).item();
            assert!(r <= 0.0 && r > prev);
            prev = r;
        }
        assert!(prev > -1e-15);
    }

    #[test]
    fn graph_regularizer_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ev = Tensor::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let omegas: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let g = RelationalGraph::new(4, [(0, 1), (1, 3), (2, 3)]).unwrap();
        let mut t = Tape::new();
        let e = t.constant(ev.clone()).unwrap();
        let oms: Vec<Var> = omegas.iter().map(|o| t.constant(o.clone()).unwrap()).collect();
        let got = graph_regularizer(&mut t, e, &oms, &g).unwrap();
        let got = t.value(got).item();
        let mut want = 0.0;
        for om in &omegas {
            for k in 0..4 {
                for j in 0..=k {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s += ev.get(j, a) * om.get(a, b) * ev.get(k, b);
                        }
                    }
                    want += -(1.0 + s.exp()).ln() + if g.has_edge(j, k) { s } else { 0.0 };
                }
            }
        }
        want /= 2.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn graph_regularizer_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ev = Tensor::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
        let raw = Tensor::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        // the j <= k sum only sees one orientation of each pair
        let om = Tensor::from_fn(4, 4, |a, b| 0.5 * (raw.get(a, b) + raw.get(b, a)));
        let g = RelationalGraph::new(5, [(0, 1), (1, 2), (0, 4)]).unwrap();
        let perm = [3, 0, 4, 1, 2];
        // vertex i moves to perm[i]
        let mut moved = Tensor::zeros(5, 4);
        for i in 0..5 {
            for c in 0..4 {
                moved.set(perm[i], c, ev.get(i, c));
            }
        }
        let eval = |e: &Tensor, g: &RelationalGraph| {
            let mut t = Tape::new();
            let e = t.constant(e.clone()).unwrap();
            let o = t.constant(om.clone()).unwrap();
            let r = graph_regularizer(&mut t, e, &[o], g).unwrap();
            t.value(r).item()
        };
        let a = eval(&ev, &g);
        let b = eval(&moved, &g.relabel(&perm).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    fn toy_model() -> Thp {
        let mut cfg = ModelConfig::desk(2);
        cfg.dropout = 0.0;
        Thp::new(cfg, 21).unwrap()
    }

    #[test]
    fn batch_of_identical_sequences_scales() {
        let model = toy_model();
        let seq = EventSequence::from_parts(&[0.4, 1.1, 1.5, 2.9], &[0, 1, 1, 0]).unwrap();
        let cfg = LikelihoodConfig {
            estimator: Estimator::Trapezoidal,
            ..Default::default()
        };
        let one = total_objective(&model, &[seq.clone()], &cfg, None, 0, false).unwrap();
        let three = total_objective(&model, &[seq.clone(), seq.clone(), seq], &cfg, None, 0, false).unwrap();
        assert!((three.breakdown.total - 3.0 * one.breakdown.total).abs() < 1e-10);
    }

    #[test]
    fn single_event_batch_errors() {
        let model = toy_model();
        let seq = EventSequence::from_parts(&[0.4], &[0]).unwrap();
        let err = total_objective(&model, &[seq], &LikelihoodConfig::default(), None, 0, false).unwrap_err();
        assert_eq!(err, Error::TooShort { len: 1 });
    }

    #[test]
    fn breakdown_total_identity() {
        let model = toy_model();
        let seq = EventSequence::from_parts(&[0.4, 1.1, 1.5, 2.9], &[0, 1, 1, 0]).unwrap();
        let b = total_objective(&model, &[seq], &LikelihoodConfig::default(), None, 3, false)
            .unwrap()
            .breakdown;
        let want = -(b.event_ll - b.nonevent) + b.type_loss + b.time_loss;
        assert!((b.total - want).abs() < 1e-12);
        assert_eq!(b.scored_events, 3);
    }
}
