//! Continuous-time conditional intensity on top of the encoder's hidden states.
//!
//! On the interval `[t_j, t_{j+1})` component `c` has intensity
//!
//! ```text
//! lambda_c(t) = f_c( alpha_c (t - t_j) / t_j + w_c^T h(t_j) + b_c )
//! f_c(x)      = beta_c log(1 + exp(x / beta_c))
//! ```
//!
//! Components are event types, or `(type, vertex)` pairs for structured
//! models. `beta_c` is stored as `log beta_c`.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Bound, Thp};

/// Intensity parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct IntensityVars {
    /// `1 x C`.
    pub alpha: Var,
    /// `M x C`.
    pub w: Var,
    /// `1 x C`.
    pub b: Var,
    /// `1 x C`.
    pub log_beta: Var,
}

impl IntensityVars {
    pub fn bind(model: &Thp, bound: &Bound) -> Self {
        IntensityVars {
            alpha: bound.var(model.layout.alpha),
            w: bound.var(model.layout.w_int),
            b: bound.var(model.layout.b_int),
            log_beta: bound.var(model.layout.log_beta),
        }
    }
}

/// Per-event history term `H w + b` (`L x C`), shared by every query on
/// the sequence.
pub fn history_scores(tape: &mut Tape, hidden: Var, p: IntensityVars) -> Result<Var> {
    let s = tape.matmul(hidden, p.w)?;
    tape.add_row(s, p.b)
}

/// Intensities of every component at a batch of query times (`n x C`).
///
/// Query `i` sits in the interval anchored at event `anchors[i]`, whose time
/// is `anchor_times[i]`.
pub fn intensity_at(
    tape: &mut Tape,
    history: Var,
    p: IntensityVars,
    anchors: &[usize],
    anchor_times: &[f64],
    query_times: &[f64],
) -> Result<Var> {
    let ratio: Vec<f64> = anchor_times
        .iter()
        .zip(query_times)
        .map(|(&tj, &t)| (t - tj) / tj)
        .collect();
    let ratio = tape.constant(Tensor::column_vector(ratio))?;
    let current = tape.matmul(ratio, p.alpha)?;
    let hist = tape.gather_rows(history, anchors)?;
    let pre = tape.add(current, hist)?;
    let beta = tape.exp(p.log_beta)?;
    tape.softplus(pre, beta)
}

/// Plain-valued intensity parameters for evaluation outside a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityParams {
    pub alpha: Vec<f64>,
    /// `M x C`.
    pub w: Tensor,
    pub b: Vec<f64>,
    /// Softness, already exponentiated.
    pub beta: Vec<f64>,
}

impl IntensityParams {
    pub fn from_model(model: &Thp) -> Self {
        let s = &model.store;
        IntensityParams {
            alpha: s.get(model.layout.alpha).data().to_vec(),
            w: s.get(model.layout.w_int).clone(),
            b: s.get(model.layout.b_int).data().to_vec(),
            beta: s.get(model.layout.log_beta).data().iter().map(|x| math::exp(*x)).collect(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.alpha.len()
    }
}

/// The interval `[t_j, end]` following anchor event `j`.
///
/// `end` is the next event time (or the horizon). Queries exactly at `end`
/// give the left limit, which is what the likelihood scores.
#[derive(Debug, Clone, Copy)]
pub struct IntervalContext<'a> {
    pub anchor: usize,
    pub anchor_time: f64,
    pub end: f64,
    /// `h(t_j)`.
    pub hidden: &'a [f64],
}

impl<'a> IntervalContext<'a> {
    /// Context anchored at event `j` of a sequence with hidden states `h`.
    pub fn new(hidden: &'a Tensor, times: &[f64], j: usize) -> Self {
        IntervalContext {
            anchor: j,
            anchor_time: times[j],
            end: times.get(j + 1).copied().unwrap_or(f64::INFINITY),
            hidden: hidden.row(j),
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(self.anchor_time > 0.0) {
            return Err(Error::InvalidSequence {
                position: self.anchor,
                reason: "anchor time must be positive".into(),
            });
        }
        if !(t >= self.anchor_time && t <= self.end) {
            return Err(Error::OutsideInterval {
                t,
                start: self.anchor_time,
                end: self.end,
            });
        }
        Ok(())
    }
}

/// `lambda_c(t)` for one component.
pub fn type_intensity(t: f64, ctx: &IntervalContext<'_>, component: usize, params: &IntensityParams) -> Result<f64> {
    ctx.check(t)?;
    Ok(component_value(t, ctx, component, params))
}

fn component_value(t: f64, ctx: &IntervalContext<'_>, c: usize, p: &IntensityParams) -> f64 {
    let cols = p.w.cols();
    let hist: f64 = ctx
        .hidden
        .iter()
        .enumerate()
        .map(|(m, h)| h * p.w.data()[m * cols + c])
        .sum();
    let x = p.alpha[c] * (t - ctx.anchor_time) / ctx.anchor_time + hist + p.b[c];
    p.beta[c] * math::softplus1(x / p.beta[c])
}

/// Every component's intensity at `t`.
pub fn component_intensities(t: f64, ctx: &IntervalContext<'_>, params: &IntensityParams) -> Result<Vec<f64>> {
    ctx.check(t)?;
    Ok((0..params.num_components())
        .map(|c| component_value(t, ctx, c, params))
        .collect())
}

/// `lambda(t) = sum_c lambda_c(t)`.
pub fn total_intensity(t: f64, ctx: &IntervalContext<'_>, params: &IntensityParams) -> Result<f64> {
    Ok(component_intensities(t, ctx, params)?.iter().sum())
}
