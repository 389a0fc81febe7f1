//! Model configuration, parameter storage and initialisation.
//!
//! Matrices are stored in "row per item" orientation: the type embedding is
//! `K x M` (row `k` embeds type `k`), the vertex embedding is `|V| x M`, and
//! the intensity weights are `M x C` with one column per intensity component
//! (`C = K`, or `K * |V|` in structured mode, component `k * |V| + v`).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sequence::DEFAULT_MIN_TIME;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of event types `K`.
    pub num_types: usize,
    /// Vertex count `|V|`; `Some` switches on the structured model.
    pub num_vertices: Option<usize>,
    /// Model dimension `M` (must be even).
    pub d_model: usize,
    /// Query/key width per head.
    pub d_k: usize,
    /// Value width per head.
    pub d_v: usize,
    /// Feed-forward hidden width.
    pub d_hidden: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    /// Time stamps are divided by this before the temporal encoding.
    pub time_scale: f64,
    /// Constrain the second feed-forward matrix to identical columns.
    pub tie_fc2_columns: bool,
    /// Sequences are shifted so their first time stamp is at least this.
    pub min_time: f64,
    pub layer_norm_eps: f64,
    /// Initial value of every current-influence coefficient.
    pub alpha_init: f64,
    /// Add the learned vertex-similarity term to attention logits
    /// (structured models only).
    pub graph_attention: bool,
    /// What the linear time head regresses on.
    pub time_head: TimeHead,
}

/// Target of the next-time prediction head `W^time h(t_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeHead {
    /// The head output is the next time stamp itself.
    Absolute,
    /// The head output is the waiting time `t_{j+1} - t_j`; the predicted
    /// time stamp is `t_j` plus the output.
    Gap,
}

impl TimeHead {
    /// Predicted next time stamp from the head output.
    pub fn to_time(self, anchor_time: f64, output: f64) -> f64 {
        match self {
            TimeHead::Absolute => output,
            TimeHead::Gap => anchor_time + output,
        }
    }

    /// Regression target for the head given the anchor and next time stamp.
    pub fn target(self, anchor_time: f64, next_time: f64) -> f64 {
        match self {
            TimeHead::Absolute => next_time,
            TimeHead::Gap => next_time - anchor_time,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(1)
    }
}

impl ModelConfig {
    /// Small configuration suited to laptop-scale synthetic experiments.
    pub fn desk(num_types: usize) -> Self {
        ModelConfig {
            num_types,
            num_vertices: None,
            d_model: 16,
            d_k: 8,
            d_v: 8,
            d_hidden: 32,
            n_heads: 2,
            n_layers: 2,
            dropout: 0.1,
            time_scale: 1.0,
            tie_fc2_columns: false,
            min_time: DEFAULT_MIN_TIME,
            layer_norm_eps: 1e-5,
            alpha_init: 0.1,
            graph_attention: true,
            time_head: TimeHead::Gap,
        }
    }

    fn sized(num_types: usize, heads: usize, layers: usize, m: usize, mk: usize, mh: usize) -> Self {
        ModelConfig {
            d_model: m,
            d_k: mk,
            d_v: mk,
            d_hidden: mh,
            n_heads: heads,
            n_layers: layers,
            dropout: 0.1,
            ..ModelConfig::desk(num_types)
        }
    }

    /// 3 heads, 3 layers, M = 64, M_K = M_V = 16, M_H = 256.
    pub fn set1(num_types: usize) -> Self {
        Self::sized(num_types, 3, 3, 64, 16, 256)
    }

    /// 6 heads, 6 layers, M = 128, M_K = M_V = 64, M_H = 2048.
    pub fn set2(num_types: usize) -> Self {
        Self::sized(num_types, 6, 6, 128, 64, 2048)
    }

    /// 4 heads, 4 layers, M = 512, M_K = M_V = 512, M_H = 1024.
    pub fn set3(num_types: usize) -> Self {
        Self::sized(num_types, 4, 4, 512, 512, 1024)
    }

    pub fn preset(name: &str, num_types: usize) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk(num_types)),
            "set1" => Some(Self::set1(num_types)),
            "set2" => Some(Self::set2(num_types)),
            "set3" => Some(Self::set3(num_types)),
            _ => None,
        }
    }

    pub fn is_structured(&self) -> bool {
        self.num_vertices.is_some()
    }

    /// Number of intensity components.
    pub fn num_components(&self) -> usize {
        self.num_types * self.num_vertices.unwrap_or(1)
    }

    /// Component index of `(type, vertex)`.
    pub fn component(&self, k: usize, v: Option<usize>) -> usize {
        match self.num_vertices {
            Some(nv) => k * nv + v.unwrap_or(0),
            None => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_types == 0 {
            return bad("num_types must be at least 1".into());
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.n_layers > 0 && (self.n_heads == 0 || self.d_k == 0 || self.d_v == 0 || self.d_hidden == 0) {
            return bad("heads and layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.time_scale > 0.0) || !(self.min_time > 0.0) {
            return bad("time_scale and min_time must be positive".into());
        }
        if self.num_vertices == Some(0) {
            return bad("num_vertices must be positive when set".into());
        }
        Ok(())
    }
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        self.frozen.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Frozen parameters enter the tape as constants and are skipped by the
    /// optimiser.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a leaf (or a constant if frozen).
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &f)| if f { tape.constant(t.clone()) } else { tape.leaf(t.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients per parameter; parameters the loss does not reach get zeros.
    pub fn grads(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(v, t)| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIds {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    /// Per-head graph metric, structured mode only.
    pub omega: Vec<ParamId>,
    pub w_o: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub w_fc1: ParamId,
    pub b_fc1: ParamId,
    /// `M_H x M`, or `M_H x 1` when columns are tied.
    pub w_fc2: ParamId,
    pub b_fc2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub type_emb: ParamId,
    pub vertex_emb: Option<ParamId>,
    pub layers: Vec<LayerIds>,
    pub alpha: ParamId,
    pub w_int: ParamId,
    pub b_int: ParamId,
    pub log_beta: ParamId,
    /// `M x K`.
    pub w_type: ParamId,
    /// `M x 1`.
    pub w_time: ParamId,
}

/// A transformer Hawkes process: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Thp {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

impl Thp {
    /// Builds a model with freshly initialised parameters.
    ///
    /// Weight matrices are uniform in `±1/sqrt(fan_in)`, biases zero,
    /// layer-norm gains one, softness `beta = 1` and every current-influence
    /// coefficient `config.alpha_init`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = config.d_model;
        let k = config.num_types;
        let c = config.num_components();

        let type_emb = store.add("type_emb", uniform(&mut rng, k, m, k));
        let vertex_emb = config
            .num_vertices
            .map(|nv| store.add("vertex_emb", uniform(&mut rng, nv, m, nv)));

        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            let ln1_gain = store.add(p("ln1.gain"), Tensor::filled(1, m, 1.0));
            let ln1_bias = store.add(p("ln1.bias"), Tensor::zeros(1, m));
            let mut w_q = Vec::new();
            let mut w_k = Vec::new();
            let mut w_v = Vec::new();
            let mut omega = Vec::new();
            for h in 0..config.n_heads {
                w_q.push(store.add(p(&format!("heads.{h}.w_q")), uniform(&mut rng, m, config.d_k, m)));
                w_k.push(store.add(p(&format!("heads.{h}.w_k")), uniform(&mut rng, m, config.d_k, m)));
                w_v.push(store.add(p(&format!("heads.{h}.w_v")), uniform(&mut rng, m, config.d_v, m)));
                if config.is_structured() {
                    omega.push(store.add(p(&format!("heads.{h}.omega")), uniform(&mut rng, m, m, m)));
                }
            }
            let hv = config.n_heads * config.d_v;
            let w_o = store.add(p("w_o"), uniform(&mut rng, hv, m, hv));
            let ln2_gain = store.add(p("ln2.gain"), Tensor::filled(1, m, 1.0));
            let ln2_bias = store.add(p("ln2.bias"), Tensor::zeros(1, m));
            let w_fc1 = store.add(p("w_fc1"), uniform(&mut rng, m, config.d_hidden, m));
            let b_fc1 = store.add(p("b_fc1"), Tensor::zeros(1, config.d_hidden));
            let fc2_cols = if config.tie_fc2_columns { 1 } else { m };
            let w_fc2 = store.add(p("w_fc2"), uniform(&mut rng, config.d_hidden, fc2_cols, config.d_hidden));
            let b_fc2 = store.add(p("b_fc2"), Tensor::zeros(1, m));
            layers.push(LayerIds {
                ln1_gain,
                ln1_bias,
                w_q,
                w_k,
                w_v,
                omega,
                w_o,
                ln2_gain,
                ln2_bias,
                w_fc1,
                b_fc1,
                w_fc2,
                b_fc2,
            });
        }

        let alpha = store.add("intensity.alpha", Tensor::filled(1, c, config.alpha_init));
        let w_int = store.add("intensity.w", uniform(&mut rng, m, c, m));
        let b_int = store.add("intensity.b", Tensor::zeros(1, c));
        let log_beta = store.add("intensity.log_beta", Tensor::zeros(1, c));
        let w_type = store.add("predict.w_type", uniform(&mut rng, m, k, m));
        let w_time = store.add("predict.w_time", uniform(&mut rng, m, 1, m));

        Ok(Thp {
            config,
            store,
            layout: Layout {
                type_emb,
                vertex_emb,
                layers,
                alpha,
                w_int,
                b_int,
                log_beta,
                w_type,
                w_time,
            },
        })
    }

    /// Every per-head graph metric, across layers.
    pub fn omegas(&self) -> Vec<ParamId> {
        self.layout.layers.iter().flat_map(|l| l.omega.iter().copied()).collect()
    }

    /// Overwrites parameters from `(name, tensor)` pairs, checking shapes.
    pub fn load_params<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, Tensor)>) -> Result<()> {
        let mut seen = 0;
        for (name, t) in params {
            let id = self
                .store
                .find(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
            let cur = self.store.get(id);
            if cur.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load_params",
                    lhs: cur.shape(),
                    rhs: t.shape(),
                });
            }
            *self.store.get_mut(id) = t;
            seen += 1;
        }
        if seen != self.store.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, got {seen}",
                self.store.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_sizes() {
        let s = ModelConfig::set1(3);
        assert_eq!((s.n_heads, s.n_layers, s.d_model, s.d_k, s.d_v, s.d_hidden), (3, 3, 64, 16, 16, 256));
        let s = ModelConfig::set2(3);
        assert_eq!((s.n_heads, s.n_layers, s.d_model, s.d_k, s.d_hidden), (6, 6, 128, 64, 2048));
        let s = ModelConfig::set3(3);
        assert_eq!((s.n_heads, s.n_layers, s.d_model, s.d_k, s.d_hidden), (4, 4, 512, 512, 1024));
        for s in [ModelConfig::set1(1), ModelConfig::set2(1), ModelConfig::set3(1)] {
            assert_eq!(s.dropout, 0.1);
        }
    }

    #[test]
    fn odd_model_dimension_rejected() {
        let mut c = ModelConfig::desk(2);
        c.d_model = 7;
        assert!(matches!(Thp::new(c, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let mut c = ModelConfig::desk(3);
        c.num_vertices = Some(4);
        let a = Thp::new(c.clone(), 5).unwrap();
        let b = Thp::new(c.clone(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.store.get(a.layout.type_emb).shape(), [3, 16]);
        assert_eq!(a.store.get(a.layout.vertex_emb.unwrap()).shape(), [4, 16]);
        assert_eq!(a.store.get(a.layout.w_int).shape(), [16, 12]);
        assert_eq!(a.omegas().len(), 4);
        assert_eq!(a.store.get(a.layout.log_beta), &Tensor::zeros(1, 12));
        assert_eq!(a.store.get(a.layout.alpha), &Tensor::filled(1, 12, 0.1));
    }
}
