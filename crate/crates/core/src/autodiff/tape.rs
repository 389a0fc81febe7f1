use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Additive logit used for masked attention positions.
pub const MASK_NEG: f64 = -1e9;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Softmax(Var),
    LogSoftmax(Var),
    Relu(Var),
    Softplus(Var, Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation and replays it backwards.
///
/// Leaf gradients persist across [`Tape::backward`] calls and accumulate until
/// [`Tape::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        finite(name, &value)?;
        Ok(self.push(value, op, needs_grad))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_checked("leaf", value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_checked("constant", value, Op::Leaf, false)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        self.leaf_grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(node.value.rows(), node.value.cols(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = av.matmul(bv)?;
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("matmul", out, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        matmul_nt_into(av.data(), bv.data(), out.data_mut(), av.rows(), av.cols(), bv.rows());
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("matmul_nt", out, Op::MatMulNT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push_checked(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: av.shape(),
                rhs: rv.shape(),
            });
        }
        let cols = av.cols();
        let mut out = av.clone();
        for r in 0..av.rows() {
            add_into(&mut out.data_mut()[r * cols..(r + 1) * cols], rv.data());
        }
        let ng = self.ng(a) || self.ng(row);
        self.push_checked("add_row", out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a);
        self.push_checked("scale", out, Op::Scale(a, c), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, factor: &Tensor) -> Result<Var> {
        let av = self.value(a);
        same_shape("mul_const", av, factor)?;
        let data = av.data().iter().zip(factor.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a);
        self.push_checked("mul_const", out, Op::MulConst(a, factor.data().to_vec()), ng)
    }

    /// Row-wise softmax of `a + mask`, with the row maximum subtracted first.
    ///
    /// `mask` is an additive matrix of the same shape (use [`MASK_NEG`] for
    /// excluded entries); pass `None` for no mask.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let av = self.value(a);
        if let Some(m) = mask {
            same_shape("softmax", av, m)?;
        }
        let (rows, cols) = (av.rows(), av.cols());
        let mut out = av.clone();
        if let Some(m) = mask {
            add_into(out.data_mut(), m.data());
        }
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = math::exp(*x - max);
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let ng = self.ng(a);
        self.push_checked("softmax", out, Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax computed through log-sum-exp.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut out = av.clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|x| math::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push_checked("log_softmax", out, Op::LogSoftmax(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a);
        self.push_checked("relu", out, Op::Relu(a), ng)
    }

    /// `beta * log(1 + exp(x / beta))` with one softness per column.
    ///
    /// `beta` is `1 x n` for an `m x n` input and must be strictly positive.
    pub fn softplus(&mut self, x: Var, beta: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(beta));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "softplus",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        if bv.data().iter().any(|b| !(*b > 0.0)) {
            return Err(Error::NonFinite { op: "softplus" });
        }
        let cols = xv.cols();
        let out = Tensor::from_fn(xv.rows(), cols, |r, c| {
            let b = bv.data()[c];
            b * math::softplus1(xv.get(r, c) / b)
        });
        let ng = self.ng(x) || self.ng(beta);
        self.push_checked("softplus", out, Op::Softplus(x, beta), ng)
    }

    /// Softplus with a fixed scalar softness.
    pub fn softplus_fixed(&mut self, x: Var, beta: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        let b = self.constant(Tensor::filled(1, cols, beta))?;
        self.softplus(x, b)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| math::ln(*x)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a);
        self.push_checked("log", out, Op::Log(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| math::exp(*x)).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let ng = self.ng(a);
        self.push_checked("exp", out, Op::Exp(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.len().max(1) as f64;
        let s = av.data().iter().sum::<f64>() / n;
        let ng = self.ng(a);
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Sums each row: `m x n -> m x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::column_vector((0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        let ng = self.ng(a);
        self.push_checked("row_sum", out, Op::RowSum(a), ng)
    }

    /// Concatenates along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Shape {
            op: "concat",
            lhs: [0, 0],
            rhs: [0, 0],
        })?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.rows() != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(first).shape(),
                    rhs: pv.shape(),
                });
            }
            total += pv.cols();
        }
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..rows {
                let dst = &mut out.data_mut()[r * total + offset..r * total + offset + pv.cols()];
                dst.copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: av.shape(),
                rhs: [start, len],
            });
        }
        let out = Tensor::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Builds a matrix whose row `i` is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: av.shape(),
                rhs: [bad, 0],
            });
        }
        let cols = av.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::from_vec(idx.len(), cols, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Picks entry `(r, idx[r])` from every row: `m x n -> m x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() || idx.iter().any(|&c| c >= av.cols()) {
            return Err(Error::Shape {
                op: "pick_cols",
                lhs: av.shape(),
                rhs: [idx.len(), 1],
            });
        }
        let out = Tensor::column_vector(idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect());
        let ng = self.ng(a);
        Ok(self.push(out, Op::PickCols(a, idx.to_vec()), ng))
    }

    /// Normalises each row to zero mean and unit variance, then applies a
    /// learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols();
        for p in [gv, bv] {
            if p.rows() != 1 || p.cols() != n {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: xv.shape(),
                    rhs: p.shape(),
                });
            }
        }
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; xv.rows()];
        let mut out = Tensor::zeros(xv.rows(), n);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out.set(r, c, h * gv.data()[c] + bv.data()[c]);
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push_checked(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// survivors by `1 / (1 - p)`. `p == 0` records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        if !(p < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("dropout rate {p} outside [0, 1)")));
        }
        let av = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(av.rows(), av.cols(), |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep });
        self.mul_const(a, &mask)
    }

    /// Back-propagates from a `1 x 1` loss, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::NotScalar { shape });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, contribution: Vec<f64>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => add_into(existing, &contribution),
                    slot => *slot = Some(contribution),
                }
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[i] {
                        Some(existing) => add_into(existing, &g),
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, p) = (av.rows(), av.cols(), bv.cols());
                    if nodes[a.0].needs_grad {
                        let mut da = vec![0.0; m * k];
                        matmul_nt_into(&g, bv.data(), &mut da, m, p, k);
                        acc(*a, da);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![0.0; k * p];
                        matmul_tn_into(av.data(), &g, &mut db, m, k, p);
                        acc(*b, db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    // out = a b^T, a: m x k, b: p x k
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, p) = (av.rows(), av.cols(), bv.rows());
                    if nodes[a.0].needs_grad {
                        let mut da = vec![0.0; m * k];
                        matmul_into(&g, bv.data(), &mut da, m, p, k);
                        acc(*a, da);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![0.0; p * k];
                        matmul_tn_into(&g, av.data(), &mut db, m, p, k);
                        acc(*b, db);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (out.rows(), out.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] = g[i * c + j];
                        }
                    }
                    acc(*a, da);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|x| -x).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
                Op::AddRow(a, row) => {
                    let cols = out.cols();
                    let mut dr = vec![0.0; cols];
                    for chunk in g.chunks(cols) {
                        add_into(&mut dr, chunk);
                    }
                    acc(*row, dr);
                    acc(*a, g);
                }
                Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
                Op::MulConst(a, f) => acc(*a, g.iter().zip(f).map(|(x, y)| x * y).collect()),
                Op::Softmax(a) => {
                    let cols = out.cols();
                    let y = out.data();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..out.rows() {
                        let s = r * cols..(r + 1) * cols;
                        let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(x, y)| x * y).sum();
                        for idx in s {
                            da[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                    acc(*a, da);
                }
                Op::LogSoftmax(a) => {
                    let cols = out.cols();
                    let y = out.data();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..out.rows() {
                        let s = r * cols..(r + 1) * cols;
                        let total: f64 = g[s.clone()].iter().sum();
                        for idx in s {
                            da[idx] = g[idx] - math::exp(y[idx]) * total;
                        }
                    }
                    acc(*a, da);
                }
                Op::Relu(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, g.iter().zip(av).map(|(x, v)| if *v > 0.0 { *x } else { 0.0 }).collect());
                }
                Op::Softplus(x, beta) => {
                    let (xv, bv) = (&nodes[x.0].value, &nodes[beta.0].value);
                    let cols = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    let mut db = vec![0.0; cols];
                    for r in 0..xv.rows() {
                        for c in 0..cols {
                            let b = bv.data()[c];
                            let z = xv.get(r, c) / b;
                            let s = math::sigmoid(z);
                            let gi = g[r * cols + c];
                            dx[r * cols + c] = gi * s;
                            db[c] += gi * (math::softplus1(z) - z * s);
                        }
                    }
                    acc(*x, dx);
                    acc(*beta, db);
                }
                Op::Log(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, g.iter().zip(av).map(|(x, v)| x / v).collect());
                }
                Op::Exp(a) => acc(*a, g.iter().zip(out.data()).map(|(x, y)| x * y).collect()),
                Op::Sum(a) => acc(*a, vec![g[0]; nodes[a.0].value.len()]),
                Op::Mean(a) => {
                    let n = nodes[a.0].value.len();
                    acc(*a, vec![g[0] / n as f64; n]);
                }
                Op::RowSum(a) => {
                    let av = &nodes[a.0].value;
                    let cols = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (r, gr) in g.iter().enumerate() {
                        da[r * cols..(r + 1) * cols].iter_mut().for_each(|d| *d = *gr);
                    }
                    acc(*a, da);
                }
                Op::Concat(parts) => {
                    let total = out.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.cols();
                        let mut dp = Vec::with_capacity(out.rows() * pc);
                        for r in 0..out.rows() {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + pc]);
                        }
                        acc(*p, dp);
                        offset += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = &nodes[a.0].value;
                    let (cols, len) = (av.cols(), out.cols());
                    let mut da = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        da[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    acc(*a, da);
                }
                Op::GatherRows(a, idx) => {
                    let av = &nodes[a.0].value;
                    let cols = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut da[src * cols..(src + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                    acc(*a, da);
                }
                Op::PickCols(a, idx) => {
                    let av = &nodes[a.0].value;
                    let cols = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (r, &c) in idx.iter().enumerate() {
                        da[r * cols + c] = g[r];
                    }
                    acc(*a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = nodes[gain.0].value.data();
                    let n = gv.len();
                    let rows = out.rows();
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    let mut dx = vec![0.0; rows * n];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            dgain[c] += gr[c] * hr[c];
                            dbias[c] += gr[c];
                            let d = gr[c] * gv[c];
                            sum_d += d;
                            sum_dh += d * hr[c];
                        }
                        let nf = n as f64;
                        for c in 0..n {
                            let d = gr[c] * gv[c];
                            dx[r * n + c] = rstd[r] / nf * (nf * d - sum_d - hr[c] * sum_dh);
                        }
                    }
                    acc(*gain, dgain);
                    acc(*bias, dbias);
                    acc(*x, dx);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks the tape gradient of `f` at `inputs` against central differences.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        // weight the output so every entry matters differently
        let w = Tensor::from_fn(tape.value(out).rows(), tape.value(out).cols(), |r, c| {
            1.0 + 0.37 * r as f64 - 0.21 * c as f64
        });
        let weighted = tape.mul_const(out, &w).unwrap();
        let loss = tape.sum(weighted).unwrap();
        tape.backward(loss).unwrap();

        let eval = |vals: &[Tensor]| -> f64 {
            let mut t = Tape::new();
            let vs: Vec<Var> = vals.iter().map(|x| t.leaf(x.clone()).unwrap()).collect();
            let o = f(&mut t, &vs).unwrap();
            t.value(o).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for (i, v) in vars.iter().enumerate() {
            let analytic = tape.grad(*v).unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
            for e in 0..inputs[i].len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[e] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[e];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    rel < 1e-6 || (a - numeric).abs() < 1e-9,
                    "input {i} entry {e}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0)).unwrap();
        let y = t.softplus_fixed(x, 1.0).unwrap();
        assert_eq!(t.value(y).item(), core::f64::consts::LN_2);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 0.5);
    }

    #[test]
    fn softplus_scaling_identity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(2.0)).unwrap();
        let a = t.softplus_fixed(x, 4.0).unwrap();
        let direct = t.value(a).item();
        let via = 4.0 * math::softplus1(2.0 / 4.0);
        assert!((direct - via).abs() / via < 1e-12);
    }

    #[test]
    fn softplus_stable_for_large_arguments() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![700.0, -700.0, 1e4])).unwrap();
        let y = t.softplus_fixed(x, 1.0).unwrap();
        let v = t.value(y).data();
        assert_eq!(v[0], 700.0);
        assert!(v[1] > 0.0);
        assert_eq!(v[2], 1e4);
    }

    #[test]
    fn masked_softmax_annihilates() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![0.0, 0.0, 0.0])).unwrap();
        let mask = Tensor::row_vector(vec![0.0, 0.0, MASK_NEG]);
        let y = t.softmax_rows(x, Some(&mask)).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn identity_matmul_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::identity(2)).unwrap();
        let b = t.leaf(Tensor::identity(2)).unwrap();
        let c = t.matmul(a, b).unwrap();
        let l = t.sum(c).unwrap();
        t.backward(l).unwrap();
        // d sum(AB)/dA = ones * B^T, all ones for B = I
        assert_eq!(t.grad(a).unwrap(), Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn diagonal_selected_matmul_gradient_is_b_transpose() {
        // loss = sum(I .* AB), so dloss/dA = I * B^T = B^T
        let mut t = Tape::new();
        let a = t.leaf(Tensor::identity(2)).unwrap();
        let b = t.leaf(Tensor::identity(2)).unwrap();
        let c = t.matmul(a, b).unwrap();
        let sel = t.mul_const(c, &Tensor::identity(2)).unwrap();
        let l = t.sum(sel).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap(), Tensor::identity(2));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 2)).unwrap();
        assert_eq!(t.backward(a), Err(Error::NotScalar { shape: [2, 2] }));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::scalar(3.0)).unwrap();
        let x = t.constant(Tensor::scalar(2.0)).unwrap();
        let y = t.mul(w, x).unwrap();
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(w).unwrap().item(), 4.0);
        t.zero_grad();
        assert!(t.grad(w).is_none());
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = t.leaf(Tensor::zeros(2, 3)).unwrap();
        assert_eq!(
            t.matmul(a, b),
            Err(Error::Shape {
                op: "matmul",
                lhs: [2, 3],
                rhs: [2, 3]
            })
        );
    }

    #[test]
    fn non_finite_input_fails_fast() {
        let mut t = Tape::new();
        assert_eq!(t.leaf(Tensor::scalar(f64::NAN)), Err(Error::NonFinite { op: "leaf" }));
        let z = t.leaf(Tensor::scalar(0.0)).unwrap();
        assert_eq!(t.log(z), Err(Error::NonFinite { op: "log" }));
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        let pos = Tensor::from_fn(3, 4, |_, _| rng.gen_range(0.5..2.0));
        let beta = Tensor::from_fn(1, 4, |_, _| rng.gen_range(0.5..2.0));

        check(vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.matmul_nt(v[0], v[1]));
        check(vec![a.clone()], |t, v| t.transpose(v[0]));
        check(vec![a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
        check(vec![a.clone()], |t, v| t.mul(v[0], v[0]));
        check(vec![a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]));
        check(vec![a.clone()], |t, v| t.scale(v[0], -1.7));
        let mut mask = Tensor::zeros(3, 4);
        mask.set(0, 2, MASK_NEG);
        mask.set(0, 3, MASK_NEG);
        mask.set(1, 3, MASK_NEG);
        check(vec![a.clone()], |t, v| t.softmax_rows(v[0], Some(&mask)));
        check(vec![a.clone()], |t, v| t.log_softmax_rows(v[0]));
        check(vec![a.clone()], |t, v| t.relu(v[0]));
        check(vec![a.clone(), beta.clone()], |t, v| t.softplus(v[0], v[1]));
        check(vec![pos.clone()], |t, v| t.log(v[0]));
        check(vec![a.clone()], |t, v| t.exp(v[0]));
        check(vec![a.clone()], |t, v| t.sum(v[0]));
        check(vec![a.clone()], |t, v| t.mean(v[0]));
        check(vec![a.clone()], |t, v| t.row_sum(v[0]));
        check(vec![a.clone(), c.clone()], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
        check(vec![a.clone()], |t, v| t.slice_cols(v[0], 1, 2));
        check(vec![a.clone()], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1]));
        check(vec![a.clone()], |t, v| t.pick_cols(v[0], &[3, 0, 1]));
        check(vec![a.clone(), row.clone(), beta.clone()], |t, v| {
            t.layer_norm(v[0], v[2], v[1], 1e-5)
        });
    }

    #[test]
    fn dropout_eval_identity_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let a = t.leaf(Tensor::filled(4, 4, 1.0)).unwrap();
        assert_eq!(t.dropout(a, 0.0, &mut rng).unwrap(), a);
        let d1 = t.dropout(a, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let d2 = t.dropout(a, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(t.value(d1), t.value(d2));
        assert!(t.value(d1).data().iter().all(|&x| x == 0.0 || x == 2.0));
    }
}
