//! Mini-batch training with Adam, early stopping on dev log-likelihood, and
//! evaluation.
//!
//! Every sequence gets its own tape. Per-sequence randomness (dropout masks,
//! Monte Carlo draws) comes from streams derived from `(seed, epoch, index)`,
//! and batch gradients are reduced in sequence order, so results do not
//! depend on how a [`BatchExecutor`] schedules the work.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::RelationalGraph;
use crate::likelihood::{
    add_grads, graph_objective, sequence_objective, Evaluation, LikelihoodConfig, LossBreakdown, SequenceSeeds,
};
use crate::math;
use crate::model::Thp;
use crate::optim::{Adam, AdamConfig};
use crate::predict::{predict_density_sequence, predict_heads, DensityConfig};
use crate::rng::{derive_seed, rng_for};
use crate::sequence::EventSequence;

const SHUFFLE: u64 = 0x5348;
const DROPOUT: u64 = 0x4452;
const MC: u64 = 0x4d43;
const EVAL: u64 = 0x4556;
const RESAMPLE: u64 = 0x5253;

/// Runs independent per-sequence jobs and returns results in index order.
pub trait BatchExecutor {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl BatchExecutor for Serial {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(job).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub likelihood: LikelihoodConfig,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            likelihood: LikelihoodConfig::default(),
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        self.likelihood.validate()
    }
}

/// One line of the per-epoch loss log. Loss fields are summed over the
/// epoch's batches as computed before each update; `graph_reg` is the mean
/// over batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub event_ll: f64,
    pub nonevent: f64,
    pub type_loss: f64,
    pub time_loss: f64,
    pub graph_reg: f64,
    pub total: f64,
    /// Training log-likelihood per scored event.
    pub per_event_ll: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_per_event_ll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (the last one without a dev set).
    pub best_epoch: usize,
    pub best_dev_per_event_ll: Option<f64>,
    pub stopped_early: bool,
}

/// Checks sequences against a model before training or evaluation.
pub fn validate_dataset(model: &Thp, seqs: &[EventSequence]) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::InvalidSequence {
                position: 0,
                reason: format!("sequence {i} has {} event(s); at least 2 are needed", s.len()),
            });
        }
        s.check_ranges(model.config.num_types, model.config.num_vertices)
            .map_err(|e| Error::InvalidSequence {
                position: 0,
                reason: format!("sequence {i}: {e}"),
            })?;
    }
    Ok(())
}

fn numerical(context: String, err: Error) -> Error {
    match err {
        Error::NonFinite { op } => Error::Divergence {
            context: format!("{context}: non-finite value in {op}"),
        },
        Error::Divergence { context: c } => Error::Divergence {
            context: format!("{context}: {c}"),
        },
        other => other,
    }
}

/// Trains `model` in place and keeps the parameters of the best dev epoch.
///
/// `on_epoch` sees each log line as soon as the epoch finishes.
pub fn train<E: BatchExecutor>(
    model: &mut Thp,
    train: &[EventSequence],
    dev: &[EventSequence],
    graph: Option<&RelationalGraph>,
    cfg: &TrainConfig,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    validate_dataset(model, train)?;
    validate_dataset(model, dev)?;
    let graph = graph.filter(|_| model.config.is_structured());

    let mut adam = Adam::new(cfg.adam, &model.store);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut waited = 0;
    let mut stopped_early = false;
    let use_dropout = model.config.dropout > 0.0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE, epoch as u64]));

        let mut sums = LossBreakdown::default();
        let mut graph_sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let context = || format!("epoch {epoch} batch {b}");
            let m: &Thp = model;
            let results = exec.map(batch.len(), &|i| {
                let idx = batch[i] as u64;
                let seeds = SequenceSeeds {
                    dropout: use_dropout.then(|| derive_seed(cfg.seed, &[DROPOUT, epoch as u64, idx])),
                    mc: derive_seed(cfg.seed, &[MC, epoch as u64, idx]),
                };
                sequence_objective(m, &train[batch[i]], &cfg.likelihood, seeds, true)
            });
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_total = LossBreakdown::default();
            let mut absorb = |ev: Evaluation, acc: &mut LossBreakdown| {
                acc.accumulate(&ev.breakdown);
                if let Some(g) = ev.grads {
                    match grads.as_mut() {
                        Some(a) => add_grads(a, &g),
                        None => grads = Some(g),
                    }
                }
            };
            for r in results {
                absorb(r.map_err(|e| numerical(context(), e))?, &mut batch_total);
            }
            if let Some(g) = graph {
                let ev = graph_objective(model, g, cfg.likelihood.graph_weight, true).map_err(|e| numerical(context(), e))?;
                graph_sum += ev.breakdown.graph_reg;
                absorb(ev, &mut batch_total);
            }
            if !batch_total.total.is_finite() {
                return Err(Error::Divergence {
                    context: format!("{}: total objective {}", context(), batch_total.total),
                });
            }
            sums.accumulate(&batch_total);
            let grads = grads.unwrap_or_default();
            adam.step(&mut model.store, &grads).map_err(|e| numerical(context(), e))?;
        }

        let dev_ll = if dev.is_empty() {
            None
        } else {
            let b = loglik_sum(model, dev, &cfg.likelihood, cfg.seed, exec)
                .map_err(|e| numerical(format!("epoch {epoch} dev evaluation"), e))?;
            Some(b.per_event_ll())
        };
        let line = EpochLog {
            epoch,
            event_ll: sums.event_ll,
            nonevent: sums.nonevent,
            type_loss: sums.type_loss,
            time_loss: sums.time_loss,
            graph_reg: graph_sum / batches.len() as f64,
            total: sums.total,
            per_event_ll: sums.per_event_ll(),
            dev_per_event_ll: dev_ll,
        };
        on_epoch(&line);
        log.push(line);

        match dev_ll {
            Some(d) if best.as_ref().map_or(true, |(b, _, _)| d > *b) => {
                best = Some((d, epoch, model.store.tensors().to_vec()));
                waited = 0;
            }
            Some(_) => {
                waited += 1;
                if waited >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
            None => {}
        }
    }

    let (best_epoch, best_dev) = match best {
        Some((d, e, params)) => {
            for (id, t) in model.store.ids().zip(params).collect::<Vec<_>>() {
                *model.store.get_mut(id) = t;
            }
            (e, Some(d))
        }
        None => (log.len().saturating_sub(1), None),
    };
    Ok(TrainReport {
        log,
        best_epoch,
        best_dev_per_event_ll: best_dev,
        stopped_early,
    })
}

/// Summed likelihood terms over `seqs`, dropout off, Monte Carlo draws from
/// streams derived from `(seed, index)`.
pub fn loglik_sum<E: BatchExecutor>(
    model: &Thp,
    seqs: &[EventSequence],
    cfg: &LikelihoodConfig,
    seed: u64,
    exec: &E,
) -> Result<LossBreakdown> {
    let results = exec.map(seqs.len(), &|i| {
        let seeds = SequenceSeeds {
            dropout: None,
            mc: derive_seed(seed, &[EVAL, i as u64]),
        };
        sequence_objective(model, &seqs[i], cfg, seeds, false).map(|e| e.breakdown)
    });
    let mut sum = LossBreakdown::default();
    for r in results {
        sum.accumulate(&r?);
    }
    Ok(sum)
}

/// Which prediction path produced the accuracy and RMSE numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionPath {
    Heads,
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub likelihood: LikelihoodConfig,
    pub seed: u64,
    /// Use the density route instead of the heads for predictions.
    pub density: Option<DensityConfig>,
    /// Bootstrap resamples of the test sequences for spread estimates.
    pub resample: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            likelihood: LikelihoodConfig::default(),
            seed: 0,
            density: None,
            resample: 0,
        }
    }
}

/// Per-sequence evaluation sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceStats {
    pub loglik: f64,
    pub scored: usize,
    pub correct: usize,
    pub squared_error: f64,
}

impl SequenceStats {
    fn add(&mut self, o: &SequenceStats) {
        self.loglik += o.loglik;
        self.scored += o.scored;
        self.correct += o.correct;
        self.squared_error += o.squared_error;
    }
}

/// Mean and standard deviation over bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    fn of(xs: &[f64]) -> Spread {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Spread {
            mean,
            std: math::sqrt(var),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resampled {
    pub resamples: usize,
    pub per_event_ll: Spread,
    pub accuracy: Spread,
    pub rmse: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_event_ll: f64,
    pub accuracy: f64,
    pub rmse: f64,
    /// `sum_i (L_i - 1)`.
    pub scored_events: usize,
    pub num_sequences: usize,
    pub prediction: PredictionPath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampled: Option<Resampled>,
}

fn summarize(stats: &SequenceStats) -> (f64, f64, f64) {
    let n = stats.scored as f64;
    (stats.loglik / n, stats.correct as f64 / n, math::sqrt(stats.squared_error / n))
}

/// Per-sequence log-likelihood and prediction statistics, dropout off.
pub fn sequence_stats(model: &Thp, seq: &EventSequence, cfg: &EvalConfig, index: usize) -> Result<SequenceStats> {
    let seeds = SequenceSeeds {
        dropout: None,
        mc: derive_seed(cfg.seed, &[EVAL, index as u64]),
    };
    let b = sequence_objective(model, seq, &cfg.likelihood, seeds, false)?.breakdown;
    let events = seq.events();
    let (mut correct, mut sq) = (0usize, 0.0);
    let mut score = |j: usize, type_hat: usize, time_hat: f64| {
        let next = &events[j + 1];
        if type_hat == next.k {
            correct += 1;
        }
        sq += (time_hat - next.t) * (time_hat - next.t);
    };
    match &cfg.density {
        None => {
            for (j, p) in predict_heads(model, seq)?.iter().enumerate() {
                score(j, p.type_hat, p.time_hat);
            }
        }
        Some(d) => {
            for (j, p) in predict_density_sequence(model, seq, d)?.iter().enumerate() {
                score(j, p.type_hat, p.time_hat);
            }
        }
    }
    Ok(SequenceStats {
        loglik: b.loglik(),
        scored: b.scored_events,
        correct,
        squared_error: sq,
    })
}

/// Per-event log-likelihood, type accuracy and time RMSE over `seqs`.
pub fn evaluate<E: BatchExecutor>(model: &Thp, seqs: &[EventSequence], cfg: &EvalConfig, exec: &E) -> Result<EvalReport> {
    if seqs.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    validate_dataset(model, seqs)?;
    let per_seq = exec
        .map(seqs.len(), &|i| sequence_stats(model, &seqs[i], cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut total = SequenceStats::default();
    for s in &per_seq {
        total.add(s);
    }
    let (ll, acc, rmse) = summarize(&total);
    let resampled = (cfg.resample > 0).then(|| bootstrap(&per_seq, cfg.resample, cfg.seed));
    Ok(EvalReport {
        per_event_ll: ll,
        accuracy: acc,
        rmse,
        scored_events: total.scored,
        num_sequences: seqs.len(),
        prediction: if cfg.density.is_some() {
            PredictionPath::Density
        } else {
            PredictionPath::Heads
        },
        resampled,
    })
}

/// Resamples sequences with replacement `n` times and reports the spread of
/// the pooled metrics.
pub fn bootstrap(per_seq: &[SequenceStats], n: usize, seed: u64) -> Resampled {
    let mut rng = rng_for(seed, &[RESAMPLE]);
    let (mut lls, mut accs, mut rmses) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let mut s = SequenceStats::default();
        for _ in 0..per_seq.len() {
            s.add(&per_seq[rng.gen_range(0..per_seq.len())]);
        }
        let (ll, acc, rmse) = summarize(&s);
        lls.push(ll);
        accs.push(acc);
        rmses.push(rmse);
    }
    Resampled {
        resamples: n,
        per_event_ll: Spread::of(&lls),
        accuracy: Spread::of(&accs),
        rmse: Spread::of(&rmses),
    }
}

/// Fraction of scored events (events `2..L`) whose type is the most common
/// one in `reference` (ties to the lowest index).
pub fn majority_baseline(reference: &[EventSequence], seqs: &[EventSequence], num_types: usize) -> f64 {
    let mut counts = alloc::vec![0usize; num_types];
    for s in reference {
        for e in &s.events()[1..] {
            counts[e.k] += 1;
        }
    }
    let top = crate::predict::argmax(&counts.iter().map(|c| *c as f64).collect::<Vec<_>>());
    let (mut hit, mut n) = (0usize, 0usize);
    for s in seqs {
        for e in &s.events()[1..] {
            hit += usize::from(e.k == top);
            n += 1;
        }
    }
    hit as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Estimator;
    use crate::model::ModelConfig;

    fn data() -> Vec<EventSequence> {
        (0..6)
            .map(|i| {
                let base = 0.3 * i as f64;
                EventSequence::from_parts(&[base + 0.5, base + 1.0, base + 1.7, base + 2.1], &[0, 1, 0, 1]).unwrap()
            })
            .collect()
    }

    fn small_model() -> Thp {
        let mut c = ModelConfig::desk(2);
        c.d_model = 8;
        c.d_k = 4;
        c.d_v = 4;
        c.d_hidden = 8;
        Thp::new(c, 3).unwrap()
    }

    #[test]
    fn zero_lr_keeps_parameters_and_losses() {
        let mut model = small_model();
        model.config.dropout = 0.0;
        let before = model.store.tensors().to_vec();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            likelihood: LikelihoodConfig {
                estimator: Estimator::Trapezoidal,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = train(&mut model, &data(), &[], None, &cfg, &Serial, &mut |_| {}).unwrap();
        assert_eq!(model.store.tensors(), &before[..]);
        assert!(r.log.windows(2).all(|w| (w[0].total - w[1].total).abs() < 1e-9));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let run = || {
            let mut m = small_model();
            let r = train(&mut m, &data(), &data()[..2], None, &cfg, &Serial, &mut |_| {}).unwrap();
            (r.log, m.store.tensors().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn short_sequences_rejected() {
        let mut m = small_model();
        let bad = [EventSequence::from_parts(&[1.0], &[0]).unwrap()];
        assert!(train(&mut m, &bad, &[], None, &TrainConfig::default(), &Serial, &mut |_| {}).is_err());
    }

    #[test]
    fn evaluation_counts_and_determinism() {
        let m = small_model();
        let cfg = EvalConfig::default();
        let a = evaluate(&m, &data(), &cfg, &Serial).unwrap();
        assert_eq!(a.scored_events, 6 * 3);
        assert!((0.0..=1.0).contains(&a.accuracy));
        assert_eq!(a, evaluate(&m, &data(), &cfg, &Serial).unwrap());
        assert!(evaluate(&m, &[], &cfg, &Serial).is_err());
    }

    #[test]
    fn single_type_majority_is_perfect() {
        let s = EventSequence::from_parts(&[1.0, 2.0, 3.0], &[0, 0, 0]).unwrap();
        assert_eq!(majority_baseline(&[s.clone()], &[s], 1), 1.0);
    }
}
