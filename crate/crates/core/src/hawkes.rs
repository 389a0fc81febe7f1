//! Classical multivariate Hawkes process with exponential kernels: intensity,
//! Ogata thinning simulation and closed-form log-likelihood.
//!
//! ```text
//! lambda_k(t) = mu_k + sum_{t_j < t} alpha[k][k_j] exp(-beta[k][k_j] (t - t_j))
//! ```
//!
//! `alpha[k][l]` is the jump in component `k`'s intensity caused by an event
//! of component `l`. With a graph, components are `(type, vertex)` pairs
//! indexed `k * |V| + v` and excitation only flows within a vertex and along
//! edges.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationalGraph;
use crate::math;
use crate::rng::rng_for;
use crate::sequence::{Event, EventSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct HawkesParams {
    mu: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    num_types: usize,
    num_vertices: Option<usize>,
}

impl HawkesParams {
    /// Unstructured process over `K = mu.len()` types.
    pub fn new(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let k = mu.len();
        let p = HawkesParams {
            mu,
            alpha,
            beta,
            num_types: k,
            num_vertices: None,
        };
        p.validate(true)?;
        Ok(p)
    }

    /// Like [`HawkesParams::new`] without the stability check, for evaluating
    /// intensities of explosive processes.
    pub fn new_unchecked(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let k = mu.len();
        let p = HawkesParams {
            mu,
            alpha,
            beta,
            num_types: k,
            num_vertices: None,
        };
        p.validate(false)?;
        Ok(p)
    }

    /// `K` types replicated on every vertex of `graph`. A type-`l` event at
    /// vertex `u` excites type `k` at vertex `v` by `alpha[k][l]` when
    /// `u == v` and by `edge_weight * alpha[k][l]` when `(u, v)` is an edge.
    pub fn on_graph(
        mu: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        graph: &RelationalGraph,
        edge_weight: f64,
    ) -> Result<Self> {
        let base = HawkesParams::new(mu, alpha, beta)?;
        if !(edge_weight >= 0.0) || !edge_weight.is_finite() {
            return Err(Error::InvalidConfig("edge_weight must be finite and non-negative".into()));
        }
        let k = base.num_types;
        let nv = graph.num_vertices();
        let d = k * nv;
        let mut alpha = vec![vec![0.0; d]; d];
        let mut beta = vec![vec![1.0; d]; d];
        for a in 0..k {
            for b in 0..k {
                for v in 0..nv {
                    for u in 0..nv {
                        let w = if u == v {
                            1.0
                        } else if graph.has_edge(u, v) {
                            edge_weight
                        } else {
                            0.0
                        };
                        alpha[a * nv + v][b * nv + u] = w * base.alpha[a][b];
                        beta[a * nv + v][b * nv + u] = base.beta[a][b];
                    }
                }
            }
        }
        let mu = (0..d).map(|c| base.mu[c / nv]).collect();
        let p = HawkesParams {
            mu,
            alpha,
            beta,
            num_types: k,
            num_vertices: Some(nv),
        };
        p.validate(true)?;
        Ok(p)
    }

    fn validate(&self, stability: bool) -> Result<()> {
        let d = self.mu.len();
        if d == 0 {
            return Err(Error::InvalidConfig("Hawkes process needs at least one type".into()));
        }
        if self.alpha.len() != d || self.beta.len() != d || self.alpha.iter().chain(&self.beta).any(|r| r.len() != d) {
            return Err(Error::InvalidConfig("alpha and beta must be K x K".into()));
        }
        if self.mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidConfig("mu must be positive".into()));
        }
        if self.alpha.iter().flatten().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidConfig("alpha must be non-negative".into()));
        }
        if self.beta.iter().flatten().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        if !stability {
            return Ok(());
        }
        let rho = self.spectral_radius();
        if !(rho < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "unstable Hawkes process: spectral radius of alpha/beta is {rho:.4}"
            )));
        }
        Ok(())
    }

    /// Number of components (`K`, or `K |V|` on a graph).
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn num_vertices(&self) -> Option<usize> {
        self.num_vertices
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    /// Upper bound on the spectral radius of the branching matrix
    /// `alpha / beta` (elementwise).
    ///
    /// Power iteration on `B + I`, which is primitive for non-negative `B`;
    /// the Collatz-Wielandt ratio `max_i (Mx)_i / x_i` bounds the Perron root
    /// from above for any positive `x`.
    pub fn spectral_radius(&self) -> f64 {
        let d = self.dim();
        let m: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| self.alpha[i][j] / self.beta[i][j] + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut x = vec![1.0; d];
        let mut upper = f64::INFINITY;
        for _ in 0..2000 {
            let y: Vec<f64> = m.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let ratios = y.iter().zip(&x).map(|(a, b)| a / b);
            let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
            upper = upper.min(hi);
            if hi - lo < 1e-12 * hi {
                break;
            }
            let norm = y.iter().cloned().fold(0.0f64, f64::max);
            x = y.iter().map(|v| v / norm).collect();
        }
        upper - 1.0
    }

    /// Component index of an event.
    pub fn component(&self, e: &Event) -> Result<usize> {
        let bad = |what, index, bound| Error::IndexOutOfRange {
            what,
            position: 0,
            index,
            bound,
        };
        if e.k >= self.num_types {
            return Err(bad("type", e.k, self.num_types));
        }
        match (self.num_vertices, e.v) {
            (None, None) => Ok(e.k),
            (Some(nv), Some(v)) if v < nv => Ok(e.k * nv + v),
            (Some(nv), Some(v)) => Err(bad("vertex", v, nv)),
            (Some(_), None) => Err(Error::InvalidSequence {
                position: 0,
                reason: "graph process needs vertex labels".to_string(),
            }),
            (None, Some(_)) => Err(Error::InvalidSequence {
                position: 0,
                reason: "vertex labels on a process without a graph".to_string(),
            }),
        }
    }

    fn event_of(&self, c: usize, t: f64) -> Event {
        match self.num_vertices {
            None => Event::new(t, c),
            Some(nv) => Event::with_vertex(t, c / nv, c % nv),
        }
    }

    fn components(&self, events: &[Event]) -> Result<Vec<usize>> {
        events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                self.component(e).map_err(|err| match err {
                    Error::IndexOutOfRange { what, index, bound, .. } => Error::IndexOutOfRange {
                        what,
                        position: i,
                        index,
                        bound,
                    },
                    Error::InvalidSequence { reason, .. } => Error::InvalidSequence { position: i, reason },
                    other => other,
                })
            })
            .collect()
    }
}

/// `lambda_k(t)` given the events of `history` strictly before `t`.
pub fn hawkes_intensity(t: f64, history: &[Event], params: &HawkesParams, k: usize) -> Result<f64> {
    let comps = params.components(history)?;
    let mut lam = params.mu[k];
    for (e, &c) in history.iter().zip(&comps) {
        if e.t < t {
            lam += params.alpha[k][c] * math::exp(-params.beta[k][c] * (t - e.t));
        }
    }
    Ok(lam)
}

/// Running excitation `S[k][l] = sum over type-l events of alpha exp(-beta dt)`,
/// advanced in time by exact decay.
struct Excitation {
    s: Vec<Vec<f64>>,
    now: f64,
}

impl Excitation {
    fn new(d: usize) -> Self {
        Excitation {
            s: vec![vec![0.0; d]; d],
            now: 0.0,
        }
    }

    fn advance(&mut self, t: f64, p: &HawkesParams) {
        let dt = t - self.now;
        for (k, row) in self.s.iter_mut().enumerate() {
            for (l, x) in row.iter_mut().enumerate() {
                if *x != 0.0 {
                    *x *= math::exp(-p.beta[k][l] * dt);
                }
            }
        }
        self.now = t;
    }

    fn jump(&mut self, c: usize, p: &HawkesParams) {
        for (k, row) in self.s.iter_mut().enumerate() {
            row[c] += p.alpha[k][c];
        }
    }

    fn intensities(&self, p: &HawkesParams) -> Vec<f64> {
        self.s
            .iter()
            .zip(&p.mu)
            .map(|(row, mu)| mu + row.iter().sum::<f64>())
            .collect()
    }
}

/// Ogata thinning on `(0, horizon]`. May return no events.
///
/// Between events every kernel decays, so the total intensity at the current
/// time bounds it until the next candidate; the bound is recomputed after
/// every candidate.
pub fn ogata_simulate(params: &HawkesParams, horizon: f64, seed: u64) -> Result<Vec<Event>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    let mut rng = rng_for(seed, &[]);
    let mut exc = Excitation::new(params.dim());
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut bound: f64 = exc.intensities(params).iter().sum();
    loop {
        // 1 - U lies in (0, 1]
        let w = -math::ln(1.0 - rng.gen::<f64>()) / bound;
        let s = t + w;
        if s > horizon {
            break;
        }
        exc.advance(s, params);
        let lam = exc.intensities(params);
        let total: f64 = lam.iter().sum();
        assert!(total <= bound * (1.0 + 1e-12), "thinning bound exceeded: {total} > {bound}");
        t = s;
        if rng.gen::<f64>() * bound <= total {
            let mut u = rng.gen::<f64>() * total;
            let mut c = lam.len() - 1;
            for (i, l) in lam.iter().enumerate() {
                if u < *l {
                    c = i;
                    break;
                }
                u -= l;
            }
            // strictly increasing times even if the gap underflows
            if events.last().map_or(false, |e: &Event| e.t >= s) {
                continue;
            }
            exc.jump(c, params);
            events.push(params.event_of(c, s));
            bound = total + (0..params.dim()).map(|k| params.alpha[k][c]).sum::<f64>();
        } else {
            bound = total;
        }
    }
    Ok(events)
}

/// Parts of a log-likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLoglik {
    /// Sum of `log lambda_{c_j}(t_j)` over scored events.
    pub event: f64,
    /// Integral of the total intensity over the window.
    pub integral: f64,
    pub scored: usize,
}

impl OracleLoglik {
    pub fn loglik(&self) -> f64 {
        self.event - self.integral
    }

    pub fn per_event(&self) -> f64 {
        self.loglik() / self.scored as f64
    }
}

/// Closed-form `integral_{start}^{end} lambda(t) dt` over all components,
/// with every event before `end` in the history.
pub fn hawkes_compensator(seq: &EventSequence, params: &HawkesParams, start: f64, end: f64) -> Result<f64> {
    if !(end >= start) {
        return Err(Error::InvalidConfig("window end before start".into()));
    }
    let comps = params.components(seq.events())?;
    let mut total = params.mu.iter().sum::<f64>() * (end - start);
    for (e, &c) in seq.events().iter().zip(&comps) {
        if e.t >= end {
            break;
        }
        let from = if e.t > start { e.t } else { start };
        for k in 0..params.dim() {
            let (a, b) = (params.alpha[k][c], params.beta[k][c]);
            if a != 0.0 {
                total += a / b * (math::exp(-b * (from - e.t)) - math::exp(-b * (end - e.t)));
            }
        }
    }
    Ok(total)
}

/// Log-likelihood on `[start, end]`. Scores every event in `(start, end]`,
/// and also events at exactly `start` when `include_first` is set.
pub fn hawkes_loglik_window(
    seq: &EventSequence,
    params: &HawkesParams,
    start: f64,
    end: f64,
    include_first: bool,
) -> Result<OracleLoglik> {
    let comps = params.components(seq.events())?;
    let events = seq.events();
    let mut exc = Excitation::new(params.dim());
    let mut event = 0.0;
    let mut scored = 0;
    for (e, &c) in events.iter().zip(&comps) {
        if e.t > end {
            break;
        }
        exc.advance(e.t, params);
        let inside = e.t > start || (include_first && e.t == start);
        if inside {
            let lam = params.mu[c] + exc.s[c].iter().sum::<f64>();
            event += math::ln(lam);
            scored += 1;
        }
        exc.jump(c, params);
    }
    Ok(OracleLoglik {
        event,
        integral: hawkes_compensator(seq, params, start, end)?,
        scored,
    })
}

/// Log-likelihood scored like the neural model: events `2..L` over
/// `[t_1, t_L]`, with `include_first` scoring event 1 over `[0, t_L]` instead.
pub fn hawkes_loglik_oracle(seq: &EventSequence, params: &HawkesParams, include_first: bool) -> Result<OracleLoglik> {
    if include_first {
        hawkes_loglik_window(seq, params, 0.0, seq.end(), true)
    } else {
        hawkes_loglik_window(seq, params, seq.start(), seq.end(), false)
    }
}

/// Homogeneous Poisson baseline with one constant rate per component, fitted
/// by maximum likelihood under the same scoring convention (events `2..L`
/// over `[t_1, t_L]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonBaseline {
    pub rates: Vec<f64>,
}

impl PoissonBaseline {
    /// `components` maps an event to its component index `< dim`.
    pub fn fit(seqs: &[EventSequence], dim: usize, component: impl Fn(&Event) -> usize) -> Result<Self> {
        let mut counts = vec![0.0; dim];
        let mut exposure = 0.0;
        for s in seqs {
            exposure += s.end() - s.start();
            for e in &s.events()[1..] {
                let c = component(e);
                if c >= dim {
                    return Err(Error::IndexOutOfRange {
                        what: "component",
                        position: 0,
                        index: c,
                        bound: dim,
                    });
                }
                counts[c] += 1.0;
            }
        }
        if !(exposure > 0.0) {
            return Err(Error::InvalidConfig("no observation time to fit rates".into()));
        }
        Ok(PoissonBaseline {
            rates: counts.iter().map(|n| n / exposure).collect(),
        })
    }

    pub fn loglik(&self, seq: &EventSequence, component: impl Fn(&Event) -> usize) -> OracleLoglik {
        let event = seq.events()[1..].iter().map(|e| math::ln(self.rates[component(e)])).sum();
        OracleLoglik {
            event,
            integral: self.rates.iter().sum::<f64>() * (seq.end() - seq.start()),
            scored: seq.len() - 1,
        }
    }

    /// Pooled per-event log-likelihood over a set of sequences.
    pub fn per_event(&self, seqs: &[EventSequence], component: impl Fn(&Event) -> usize) -> f64 {
        let (mut ll, mut n) = (0.0, 0usize);
        for s in seqs {
            let o = self.loglik(s, &component);
            ll += o.loglik();
            n += o.scored;
        }
        ll / n as f64
    }
}

/// Simulator settings as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_sequences: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<RelationalGraph>,
    /// Cross-vertex excitation scale along graph edges.
    #[serde(default = "default_edge_weight")]
    pub edge_weight: f64,
}

fn default_edge_weight() -> f64 {
    0.5
}

impl SimulatorConfig {
    pub fn params(&self) -> Result<HawkesParams> {
        if self.mu.len() != self.k {
            return Err(Error::InvalidConfig(alloc::format!(
                "K = {} but mu has {} entries",
                self.k,
                self.mu.len()
            )));
        }
        match &self.graph {
            None => HawkesParams::new(self.mu.clone(), self.alpha.clone(), self.beta.clone()),
            Some(g) => HawkesParams::on_graph(self.mu.clone(), self.alpha.clone(), self.beta.clone(), g, self.edge_weight),
        }
    }

    /// Simulates `n_sequences` sequences, sequence `i` from a seed derived
    /// from `(seed, i)`. Draws with fewer than two events are redrawn.
    pub fn simulate(&self) -> Result<Vec<EventSequence>> {
        let params = self.params()?;
        (0..self.n_sequences).map(|i| simulate_one(&params, self.horizon, self.seed, i as u64)).collect()
    }
}

/// One sequence of at least two events, redrawing from
/// `(seed, index, attempt)` when a draw is too short.
pub fn simulate_one(params: &HawkesParams, horizon: f64, seed: u64, index: u64) -> Result<EventSequence> {
    const ATTEMPTS: u64 = 1000;
    for attempt in 0..ATTEMPTS {
        let s = crate::rng::derive_seed(seed, &[index, attempt]);
        let events = ogata_simulate(params, horizon, s)?;
        if events.len() >= 2 {
            return EventSequence::new(events);
        }
    }
    Err(Error::InvalidConfig(alloc::format!(
        "no sequence with two or more events in {ATTEMPTS} draws; increase mu or T"
    )))
}
