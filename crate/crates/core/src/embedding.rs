//! Encoder input: temporal encoding plus type (and vertex) embeddings.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::math;
use crate::sequence::EventSequence;

/// Sinusoidal encoding of a time stamp into `dim` channels.
///
/// With 1-based channel index `i`, channel `i` is `cos(t / 10000^((i-1)/dim))`
/// for odd `i` and `sin(t / 10000^(i/dim))` for even `i`.
pub fn temporal_encode(t: f64, dim: usize) -> Vec<f64> {
    (1..=dim)
        .map(|i| {
            if i % 2 == 1 {
                math::cos(t / math::powf(10000.0, (i - 1) as f64 / dim as f64))
            } else {
                math::sin(t / math::powf(10000.0, i as f64 / dim as f64))
            }
        })
        .collect()
}

/// Stacks the encodings of `times / time_scale` into an `L x dim` matrix.
pub fn temporal_matrix(times: &[f64], dim: usize, time_scale: f64) -> Tensor {
    let mut data = Vec::with_capacity(times.len() * dim);
    for &t in times {
        data.extend(temporal_encode(t / time_scale, dim));
    }
    Tensor::from_vec(times.len(), dim, data).expect("temporal matrix shape")
}

/// Embedding parameters already recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    /// `K x M`.
    pub type_emb: Var,
    /// `|V| x M`, structured mode only.
    pub vertex_emb: Option<Var>,
}

/// Builds `X` (`L x M`): row `j` is the embedding of type `k_j`, plus the
/// embedding of vertex `v_j` when present, plus the temporal encoding of `t_j`.
pub fn embed_sequence(tape: &mut Tape, seq: &EventSequence, params: EmbeddingVars, time_scale: f64) -> Result<Var> {
    let emb = tape.value(params.type_emb);
    let (num_types, dim) = (emb.rows(), emb.cols());
    let num_vertices = params.vertex_emb.map(|v| tape.value(v).rows());
    seq.check_ranges(num_types, num_vertices)?;

    let types = seq.types();
    let mut x = tape.gather_rows(params.type_emb, &types)?;
    if let (Some(ve), Some(vs)) = (params.vertex_emb, seq.vertices()) {
        let ev = tape.gather_rows(ve, &vs)?;
        x = tape.add(x, ev)?;
    }
    let z = tape.constant(temporal_matrix(&seq.times(), dim, time_scale))?;
    tape.add(x, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sequence::Event;
    use alloc::vec;
    use core::f64::consts::PI;

    #[test]
    fn encoding_at_zero() {
        assert_eq!(temporal_encode(0.0, 4), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn encoding_at_pi() {
        let z = temporal_encode(PI, 2);
        assert_eq!(z[0], -1.0);
        assert!((z[1] - (PI / 10000.0).sin()).abs() < 1e-18);
        assert!((z[1] - 3.14159265e-4).abs() < 1e-11);
    }

    #[test]
    fn zero_embedding_gives_pure_encoding() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::zeros(2, 4)).unwrap();
        let seq = EventSequence::from_parts(&[0.0, 1.0, 2.0], &[0, 1, 0]).unwrap();
        let x = embed_sequence(&mut tape, &seq, EmbeddingVars { type_emb: u, vertex_emb: None }, 1.0).unwrap();
        for (j, t) in [0.0, 1.0, 2.0].iter().enumerate() {
            assert_eq!(tape.value(x).row(j), temporal_encode(*t, 4).as_slice());
        }
    }

    #[test]
    fn one_hot_pick_plus_encoding() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::identity(4)).unwrap();
        let seq = EventSequence::from_parts(&[0.0], &[2]).unwrap();
        let x = embed_sequence(&mut tape, &seq, EmbeddingVars { type_emb: u, vertex_emb: None }, 1.0).unwrap();
        assert_eq!(tape.value(x).row(0), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gradient_counts_type_occurrences() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::filled(3, 4, 0.3)).unwrap();
        let seq = EventSequence::from_parts(&[0.5, 1.0, 2.0, 2.5], &[0, 2, 0, 0]).unwrap();
        let x = embed_sequence(&mut tape, &seq, EmbeddingVars { type_emb: u, vertex_emb: None }, 1.0).unwrap();
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(u).unwrap();
        assert_eq!(g.row(0), &[3.0; 4]);
        assert_eq!(g.row(1), &[0.0; 4]);
        assert_eq!(g.row(2), &[1.0; 4]);
    }

    #[test]
    fn out_of_range_vertex_names_position() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::zeros(1, 2)).unwrap();
        let e = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        let seq = EventSequence::new(vec![Event::with_vertex(1.0, 0, 1), Event::with_vertex(2.0, 0, 5)]).unwrap();
        let err = embed_sequence(&mut tape, &seq, EmbeddingVars { type_emb: u, vertex_emb: Some(e) }, 1.0).unwrap_err();
        assert_eq!(
            err,
            Error::IndexOutOfRange {
                what: "vertex",
                position: 1,
                index: 5,
                bound: 2
            }
        );
    }
}
