#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thp_core::encoder::hidden_states;
use thp_core::intensity::{total_intensity, IntensityParams, IntervalContext};
use thp_core::model::{ModelConfig, TimeHead};
use thp_core::{Event, EventSequence, Thp};

/// Small model used across the oracle tests: M=8, two heads, two layers.
pub fn toy_config(num_types: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_k: 4,
        d_v: 4,
        d_hidden: 16,
        n_heads: 2,
        n_layers: 2,
        dropout: 0.0,
        alpha_init: 0.5,
        time_head: TimeHead::Gap,
        ..ModelConfig::desk(num_types)
    }
}

pub fn toy_model(num_types: usize, seed: u64) -> Thp {
    Thp::new(toy_config(num_types), seed).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize, num_types: usize, num_vertices: Option<usize>) -> EventSequence {
    let mut t = rng.gen_range(0.0..1.0);
    let events = (0..len)
        .map(|_| {
            t += rng.gen_range(0.05..1.0);
            let k = rng.gen_range(0..num_types);
            match num_vertices {
                Some(nv) => Event::with_vertex(t, k, rng.gen_range(0..nv)),
                None => Event::new(t, k),
            }
        })
        .collect();
    EventSequence::new(events).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Midpoint Riemann sum of the total model intensity over `[t_1, t_L]`,
/// `points` nodes per inter-event interval.
pub fn riemann_integral(model: &Thp, seq: &EventSequence, points: usize) -> f64 {
    let shifted = seq.shifted_positive(model.config.min_time);
    let times = shifted.times();
    let h = hidden_states(model, seq).unwrap();
    let params = IntensityParams::from_model(model);
    let mut total = 0.0;
    for j in 0..times.len() - 1 {
        let ctx = IntervalContext::new(&h, &times, j);
        let dt = (times[j + 1] - times[j]) / points as f64;
        for i in 0..points {
            let t = times[j] + dt * (i as f64 + 0.5);
            total += dt * total_intensity(t, &ctx, &params).unwrap();
        }
    }
    total
}

pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = x / beta;
    if z > 30.0 {
        x
    } else {
        beta * z.exp().ln_1p()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
