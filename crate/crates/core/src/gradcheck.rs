//! Central finite-difference check of the analytic gradient of the training
//! objective.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::graph::RelationalGraph;
use crate::likelihood::{
    draw_mc_samples, finish, graph_objective, sequence_terms, Estimator, LikelihoodConfig, McDraws,
};
use crate::model::{ParamId, Thp};
use crate::rng::rng_for;
use crate::sequence::EventSequence;

/// How the non-event integral is made deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CheckEstimator {
    Trapezoidal,
    /// Monte Carlo with one fixed set of draws reused by every evaluation.
    FrozenMc { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    /// Entry of the parameter where the maximum occurs, with both values.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Deterministic objective of one sequence (plus the graph term when given)
/// with dropout off.
pub struct CheckObjective<'a> {
    seq: &'a EventSequence,
    graph: Option<&'a RelationalGraph>,
    cfg: LikelihoodConfig,
    samples: Vec<f64>,
}

impl<'a> CheckObjective<'a> {
    pub fn new(
        model: &Thp,
        seq: &'a EventSequence,
        graph: Option<&'a RelationalGraph>,
        estimator: CheckEstimator,
        base: &LikelihoodConfig,
    ) -> Self {
        let mut cfg = base.clone();
        let samples = match estimator {
            CheckEstimator::Trapezoidal => {
                cfg.estimator = Estimator::Trapezoidal;
                Vec::new()
            }
            CheckEstimator::FrozenMc { samples, seed } => {
                cfg.estimator = Estimator::MonteCarlo;
                cfg.mc_samples = samples;
                let times = seq.shifted_positive(model.config.min_time).times();
                draw_mc_samples(&times, samples, &mut rng_for(seed, &[]))
            }
        };
        CheckObjective {
            seq,
            graph,
            cfg,
            samples,
        }
    }

    /// Objective value and optionally the gradient per parameter.
    pub fn eval(&self, model: &Thp, want_grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let terms = sequence_terms(
            &mut tape,
            model,
            &bound,
            self.seq,
            &self.cfg,
            None,
            McDraws::Fixed(&self.samples),
        )?;
        let ev = finish(&mut tape, model, &bound, terms, &self.cfg, want_grads)?;
        let mut value = ev.breakdown.total;
        let mut grads = ev.grads;
        if let (Some(g), true) = (self.graph, model.config.is_structured()) {
            let gev = graph_objective(model, g, self.cfg.graph_weight, want_grads)?;
            value += gev.breakdown.total;
            if let (Some(a), Some(b)) = (grads.as_mut(), gev.grads) {
                crate::likelihood::add_grads(a, &b);
            }
        }
        Ok((value, grads))
    }
}

/// Compares the analytic gradient with central differences of step `eps`
/// for every entry of every non-frozen parameter.
pub fn grad_check(
    model: &Thp,
    seq: &EventSequence,
    graph: Option<&RelationalGraph>,
    estimator: CheckEstimator,
    eps: f64,
) -> Result<GradCheckReport> {
    let objective = CheckObjective::new(model, seq, graph, estimator, &LikelihoodConfig::default());
    let (_, grads) = objective.eval(model, true)?;
    let grads = grads.unwrap_or_default();
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for i in 0..model.store.len() {
        let id = ParamId(i);
        if model.store.is_frozen(id) {
            continue;
        }
        let mut worst = GroupError {
            name: model.store.name(id).into(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..model.store.get(id).len() {
            let orig = model.store.get(id).data()[j];
            probe.store.get_mut(id).data_mut()[j] = orig + eps;
            let (up, _) = objective.eval(&probe, false)?;
            probe.store.get_mut(id).data_mut()[j] = orig - eps;
            let (down, _) = objective.eval(&probe, false)?;
            probe.store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[i].data()[j];
            let err = relative_error(analytic, numeric);
            if err > worst.max_rel_error {
                worst = GroupError {
                    max_rel_error: err,
                    worst_index: j,
                    analytic,
                    numeric,
                    ..worst
                };
            }
        }
        groups.push(worst);
    }
    Ok(GradCheckReport { groups })
}
