//! Next-event prediction.
//!
//! Two paths: linear heads on `h(t_j)` (softmax over types, regression for
//! the time), and the density route, which integrates
//! `p(t) = lambda(t) exp(-int_{t_j}^t lambda)` numerically for the expected
//! next time and takes the most intense type there.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::hidden_states;
use crate::error::{Error, Result};
use crate::intensity::{component_intensities, IntensityParams, IntervalContext};
use crate::math;
use crate::model::{Thp, TimeHead};
use crate::sequence::EventSequence;

/// Prediction for event `j + 1` made from `h(t_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub type_hat: usize,
    pub time_hat: f64,
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Heads applied to one hidden row: `softmax(h W^type)` and the time head.
pub fn head_prediction(h: &[f64], w_type: &Tensor, w_time: &Tensor, anchor_time: f64, head: TimeHead) -> Prediction {
    let k = w_type.cols();
    let mut logits = vec![0.0; k];
    for (m, hm) in h.iter().enumerate() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l += hm * w_type.get(m, c);
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| math::exp(l - max)).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let out: f64 = h.iter().enumerate().map(|(m, hm)| hm * w_time.get(m, 0)).sum();
    Prediction {
        type_hat: argmax(&probs),
        probs,
        time_hat: head.to_time(anchor_time, out),
    }
}

/// Head predictions for events `2..L`, in the sequence's own time frame.
pub fn predict_heads(model: &Thp, seq: &EventSequence) -> Result<Vec<Prediction>> {
    let shifted = seq.shifted_positive(model.config.min_time);
    let offset = shifted.start() - seq.start();
    let h = hidden_states(model, seq)?;
    let w_type = model.store.get(model.layout.w_type);
    let w_time = model.store.get(model.layout.w_time);
    let times = shifted.times();
    Ok((0..seq.len() - 1)
        .map(|j| {
            let mut p = head_prediction(h.row(j), w_type, w_time, times[j], model.config.time_head);
            p.time_hat -= offset;
            p
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Horizon as a multiple of `mean_gap`.
    pub horizon_factor: f64,
    /// Mean inter-event gap of the training data.
    pub mean_gap: f64,
    /// Grid intervals on the horizon.
    pub steps: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            horizon_factor: 20.0,
            mean_gap: 1.0,
            steps: 2000,
        }
    }
}

impl DensityConfig {
    pub fn horizon(&self) -> f64 {
        self.horizon_factor * self.mean_gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPrediction {
    pub time_hat: f64,
    pub type_hat: usize,
}

/// Expected next time under the model density on
/// `[t_j, t_j + horizon]`, renormalised over the truncated horizon, and the
/// argmax type of `lambda_k / lambda` there. Trapezoidal quadrature; the
/// cumulative intensity is accumulated on the same grid.
///
/// For structured models `num_types < C` and component intensities are
/// summed over vertices per type.
pub fn predict_density(
    ctx: &IntervalContext<'_>,
    params: &IntensityParams,
    num_types: usize,
    cfg: &DensityConfig,
) -> Result<DensityPrediction> {
    let horizon = cfg.horizon();
    if !(horizon > 0.0) || !horizon.is_finite() || cfg.steps == 0 {
        return Err(Error::InvalidConfig("density horizon and steps must be positive".into()));
    }
    let ctx = IntervalContext {
        end: f64::INFINITY,
        ..*ctx
    };
    let n = cfg.steps;
    let dt = horizon / n as f64;
    let mut lam = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = ctx.anchor_time + dt * i as f64;
        lam.push(component_intensities(t, &ctx, params)?.iter().sum::<f64>());
    }
    let mut cum = 0.0;
    let mut dens = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i > 0 {
            cum += 0.5 * dt * (lam[i - 1] + lam[i]);
        }
        dens.push(lam[i] * math::exp(-cum));
    }
    let (mut mass, mut first) = (0.0, 0.0);
    for i in 1..=n {
        let (s0, s1) = (dt * (i - 1) as f64, dt * i as f64);
        mass += 0.5 * dt * (dens[i - 1] + dens[i]);
        first += 0.5 * dt * (s0 * dens[i - 1] + s1 * dens[i]);
    }
    let time_hat = ctx.anchor_time + first / mass;
    if !time_hat.is_finite() || !(mass > 0.0) {
        return Err(Error::NonFinite { op: "predict_density" });
    }
    let comps = component_intensities(time_hat, &ctx, params)?;
    let per_vertex = comps.len() / num_types;
    let by_type: Vec<f64> = (0..num_types)
        .map(|k| comps[k * per_vertex..(k + 1) * per_vertex].iter().sum())
        .collect();
    Ok(DensityPrediction {
        time_hat,
        type_hat: argmax(&by_type),
    })
}

/// Density predictions for events `2..L`, in the sequence's own time frame.
pub fn predict_density_sequence(model: &Thp, seq: &EventSequence, cfg: &DensityConfig) -> Result<Vec<DensityPrediction>> {
    let shifted = seq.shifted_positive(model.config.min_time);
    let offset = shifted.start() - seq.start();
    let h = hidden_states(model, seq)?;
    let params = IntensityParams::from_model(model);
    let times = shifted.times();
    (0..seq.len() - 1)
        .map(|j| {
            let ctx = IntervalContext::new(&h, &times, j);
            let mut p = predict_density(&ctx, &params, model.config.num_types, cfg)?;
            p.time_hat -= offset;
            Ok(p)
        })
        .collect()
}

/// Mean inter-event gap over a dataset.
pub fn mean_gap(seqs: &[EventSequence]) -> Option<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in seqs {
        total += s.end() - s.start();
        n += s.len() - 1;
    }
    (n > 0).then(|| total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64, comps: usize) -> IntensityParams {
        // softplus(b) = c / comps per component
        let per = c / comps as f64;
        IntensityParams {
            alpha: vec![0.0; comps],
            w: Tensor::zeros(1, comps),
            b: vec![(per.exp() - 1.0).ln(); comps],
            beta: vec![1.0; comps],
        }
    }

    #[test]
    fn zero_weights_uniform_and_tie_break() {
        let p = head_prediction(&[0.3, -0.2], &Tensor::zeros(2, 3), &Tensor::zeros(2, 1), 5.0, TimeHead::Absolute);
        assert_eq!(p.probs, vec![1.0 / 3.0; 3]);
        assert_eq!(p.type_hat, 0);
        assert_eq!(p.time_hat, 0.0);
    }

    #[test]
    fn constant_intensity_mean_is_exponential() {
        let h = [0.0];
        for c in [0.5, 2.0] {
            let ctx = IntervalContext {
                anchor: 0,
                anchor_time: 1.0,
                end: 2.0,
                hidden: &h,
            };
            let cfg = DensityConfig {
                horizon_factor: 20.0,
                mean_gap: 1.0 / c,
                steps: 4000,
            };
            let p = predict_density(&ctx, &constant(c, 1), 1, &cfg).unwrap();
            let mean = p.time_hat - 1.0;
            assert!((mean - 1.0 / c).abs() < 0.01 / c, "{mean} vs {}", 1.0 / c);
            assert_eq!(p.type_hat, 0);
        }
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
