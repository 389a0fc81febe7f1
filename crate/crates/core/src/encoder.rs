//! Stacked masked multi-head self-attention over embedded event sequences.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var, MASK_NEG};
use crate::embedding::{embed_sequence, EmbeddingVars};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Bound, LayerIds, Thp};
use crate::sequence::EventSequence;

/// Additive causal mask: entry `(j, i)` is 0 for `i <= j` and [`MASK_NEG`]
/// for `i > j`, so each event sees itself and its past.
pub fn causal_mask(len: usize) -> Tensor {
    Tensor::from_fn(len, len, |j, i| if i <= j { 0.0 } else { MASK_NEG })
}

/// One attention head. Returns `(S_h, weights)` where
/// `S_h = softmax(Q K^T / sqrt(d_k) + bias + mask) V`.
pub fn attention_head(
    tape: &mut Tape,
    x: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    mask: &Tensor,
    bias: Option<Var>,
) -> Result<(Var, Var)> {
    let q = tape.matmul(x, w_q)?;
    let k = tape.matmul(x, w_k)?;
    let v = tape.matmul(x, w_v)?;
    let d_k = tape.value(w_k).cols();
    let raw = tape.matmul_nt(q, k)?;
    let mut scores = tape.scale(raw, 1.0 / math::sqrt(d_k as f64))?;
    if let Some(b) = bias {
        scores = tape.add(scores, b)?;
    }
    let weights = tape.softmax_rows(scores, Some(mask))?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Concatenates head outputs along the feature axis and aggregates with `W^O`.
pub fn multi_head(tape: &mut Tape, heads: &[Var], w_o: Var) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::InvalidConfig("multi_head needs at least one head".into()));
    }
    let cat = tape.concat_cols(heads)?;
    tape.matmul(cat, w_o)
}

/// `ReLU(S W1 + b1) W2 + b2`, row by row. A `M_H x 1` `w2` is broadcast to
/// `M` identical columns.
pub fn position_ffn(tape: &mut Tape, s: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let a = tape.matmul(s, w1)?;
    let a = tape.add_row(a, b1)?;
    let a = tape.relu(a)?;
    let out_dim = tape.value(b2).cols();
    let w2 = if tape.value(w2).cols() == 1 && out_dim != 1 {
        let ones = tape.constant(Tensor::filled(1, out_dim, 1.0))?;
        tape.matmul(w2, ones)?
    } else {
        w2
    };
    let o = tape.matmul(a, w2)?;
    tape.add_row(o, b2)
}

/// `A = (E V)^T Omega (E V)`: `A[j][i] = e(v_j)^T Omega e(v_i)` where
/// `event_vertex_emb` holds `e(v_j)` in row `j`.
pub fn vertex_similarity(tape: &mut Tape, event_vertex_emb: Var, omega: Var) -> Result<Var> {
    let left = tape.matmul(event_vertex_emb, omega)?;
    tape.matmul_nt(left, event_vertex_emb)
}

/// Result of encoding one sequence.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Encoder input `X`, `L x M`.
    pub input: Var,
    /// Hidden states `H`, `L x M`; row `j` is `h(t_j)`.
    pub hidden: Var,
    /// Post-softmax attention weights per layer, per head (`L x L`).
    pub attention: Vec<Vec<Var>>,
}

fn encode_layer(
    tape: &mut Tape,
    bound: &Bound,
    ids: &LayerIds,
    x: Var,
    mask: &Tensor,
    vertex_rows: Option<Var>,
    eps: f64,
    dropout: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<Var>)> {
    let xn = tape.layer_norm(x, bound.var(ids.ln1_gain), bound.var(ids.ln1_bias), eps)?;
    let mut outs = Vec::with_capacity(ids.w_q.len());
    let mut weights = Vec::with_capacity(ids.w_q.len());
    for h in 0..ids.w_q.len() {
        let bias = match (vertex_rows, ids.omega.get(h)) {
            (Some(ev), Some(&om)) => Some(vertex_similarity(tape, ev, bound.var(om))?),
            _ => None,
        };
        let (s, w) = attention_head(
            tape,
            xn,
            bound.var(ids.w_q[h]),
            bound.var(ids.w_k[h]),
            bound.var(ids.w_v[h]),
            mask,
            bias,
        )?;
        outs.push(s);
        weights.push(w);
    }
    let mut s = multi_head(tape, &outs, bound.var(ids.w_o))?;
    if let Some(r) = rng.as_deref_mut() {
        s = tape.dropout(s, dropout, r)?;
    }
    let x = tape.add(x, s)?;
    let xn = tape.layer_norm(x, bound.var(ids.ln2_gain), bound.var(ids.ln2_bias), eps)?;
    let mut f = position_ffn(
        tape,
        xn,
        bound.var(ids.w_fc1),
        bound.var(ids.b_fc1),
        bound.var(ids.w_fc2),
        bound.var(ids.b_fc2),
    )?;
    if let Some(r) = rng.as_deref_mut() {
        f = tape.dropout(f, dropout, r)?;
    }
    Ok((tape.add(x, f)?, weights))
}

/// Runs the embedding and the full encoder stack.
///
/// `graph_bias` adds the vertex-similarity term to every head's logits
/// (structured models only). Dropout is active iff `rng` is given.
pub fn encode(
    tape: &mut Tape,
    model: &Thp,
    bound: &Bound,
    seq: &EventSequence,
    graph_bias: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let cfg = &model.config;
    let emb = EmbeddingVars {
        type_emb: bound.var(model.layout.type_emb),
        vertex_emb: model.layout.vertex_emb.map(|id| bound.var(id)),
    };
    let input = embed_sequence(tape, seq, emb, cfg.time_scale)?;
    let vertex_rows = match (graph_bias, emb.vertex_emb) {
        (true, Some(ve)) => {
            let vs = seq.vertices().ok_or(Error::InvalidSequence {
                position: 0,
                reason: "structured attention needs vertex ids".into(),
            })?;
            Some(tape.gather_rows(ve, &vs)?)
        }
        _ => None,
    };
    let mask = causal_mask(seq.len());
    let mut x = input;
    let mut attention = Vec::with_capacity(model.layout.layers.len());
    for ids in &model.layout.layers {
        let (next, w) = encode_layer(
            tape,
            bound,
            ids,
            x,
            &mask,
            vertex_rows,
            cfg.layer_norm_eps,
            cfg.dropout,
            &mut rng,
        )?;
        x = next;
        attention.push(w);
    }
    Ok(Encoded {
        input,
        hidden: x,
        attention,
    })
}

/// Hidden states of `seq` with dropout off, as a plain matrix. The sequence
/// is shifted to `min_time` first, as in training.
pub fn hidden_states(model: &Thp, seq: &EventSequence) -> Result<Tensor> {
    let seq = &seq.shifted_positive(model.config.min_time);
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let enc = encode(&mut tape, model, &bound, seq, model.config.graph_attention, None)?;
    Ok(tape.value(enc.hidden).clone())
}

/// Post-softmax attention weights per layer and head, dropout off.
pub fn attention_weights(model: &Thp, seq: &EventSequence) -> Result<Vec<Vec<Tensor>>> {
    let seq = &seq.shifted_positive(model.config.min_time);
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let enc = encode(&mut tape, model, &bound, seq, model.config.graph_attention, None)?;
    Ok(enc
        .attention
        .iter()
        .map(|layer| layer.iter().map(|w| tape.value(*w).clone()).collect())
        .collect())
}
