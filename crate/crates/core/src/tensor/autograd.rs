//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for the backward pass.

use std::collections::HashMap;

use super::{axis_strides, check_axis, matmul_raw, transpose_raw, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Transpose(Var),
    Narrow { src: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax { src: Var, axis: usize },
    LeakyRelu { src: Var, slope: f64 },
    Sigmoid(Var),
    Gelu(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { src: Var, inv_std: Vec<f64> },
    Gather { src: Var, cols: Vec<usize> },
    PairScores { src: Var, dst: Var, mask: Vec<bool>, pivot: Vec<usize>, slope: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    faulty: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1e-5;

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose matmul backward rule is deliberately wrong. Exists only
    /// as a negative control for gradient checking.
    pub fn with_faulty_backward() -> Self {
        Self {
            faulty: true,
            ..Self::default()
        }
    }

    pub fn is_faulty(&self) -> bool {
        self.faulty
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    /// A leaf whose gradient is of interest (tests and oracles).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf)
    }

    /// Binds a stored parameter; repeated binds on one tape share a node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let t = store.tensor(id);
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("stored tensor is well formed");
        let v = self.push(value, Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shapes checked")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `a[m×n] + row[1×n]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_row")?;
        let r = self.value(row);
        if r.numel() != n {
            return Err(Error::Shape {
                op: "add_row",
                left: vec![m, n],
                right: r.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let rd = self.value(row).data();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(rd).for_each(|(x, b)| *x += b);
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(a, row)))
    }

    /// `a[m×n] ⊙ row[1×n]`, broadcasting the row over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("mul_row")?;
        let r = self.value(row);
        if r.numel() != n {
            return Err(Error::Shape {
                op: "mul_row",
                left: vec![m, n],
                right: r.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let rd = self.value(row).data();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(rd).for_each(|(x, b)| *x *= b);
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_strides(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let data = transpose_raw(self.value(a).data(), m, n);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(a)))
    }

    /// The sub-range `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        check_axis("narrow", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(Error::Range {
                what: "narrow",
                index: start + len,
                limit: shape[axis],
            });
        }
        let (outer, full, inner) = axis_strides(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner;
            data.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Narrow { src: a, axis, start },
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if end < start {
            return Err(Error::InvalidArgument(format!("slice_rows {start}..{end}")));
        }
        self.narrow(a, 0, start, end - start)
    }

    /// Gathers rows of a `vocab × d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2("embedding_lookup")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Range {
                    what: "embedding id",
                    index: id,
                    limit: v,
                });
            }
            data.extend_from_slice(self.value(table).row_slice(id));
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Softmax along `axis`. `allowed`, when given, shape-matches the input;
    /// `false` entries take an additive `-inf` and come out as exactly 0.
    pub fn softmax(&mut self, a: Var, axis: usize, allowed: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        check_axis("softmax", &shape, axis)?;
        if let Some(mask) = allowed {
            if mask.len() != t.numel() {
                return Err(Error::Shape {
                    op: "softmax mask",
                    left: shape,
                    right: vec![mask.len()],
                });
            }
        }
        let data = softmax_raw(t.data(), &shape, axis, allowed)?;
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax { src: a, axis }))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.map(a, |x| if x >= 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu { src: a, slope })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid_scalar);
        self.push(out, Op::Sigmoid(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| {
            0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
        });
        self.push(out, Op::Gelu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Normalizes every row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        let d = *shape.last().ok_or(Error::Rank {
            op: "layer_norm",
            expected: 1,
            shape: shape.clone(),
        })?;
        let mut data = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / d.max(1));
        for row in data.chunks_mut(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mu) * inv);
            inv_std.push(inv);
        }
        Ok(self.push(Tensor::new(shape, data)?, Op::LayerNorm { src: a, inv_std }))
    }

    /// Picks `a[i, cols[i]]` for every row `i`, giving an `m × 1` column.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2("gather")?;
        if cols.len() != m {
            return Err(Error::Shape {
                op: "gather",
                left: vec![m, n],
                right: vec![cols.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::Range {
                    what: "gather column",
                    index: c,
                    limit: n,
                });
            }
            data.push(self.value(a).at(i, c));
        }
        Ok(self.push(
            Tensor::new(vec![m, 1], data)?,
            Op::Gather {
                src: a,
                cols: cols.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss` seeded with `d loss = 1`.
    /// Masked pairwise attention logits `leaky(s_i + d_j)` for column vectors
    /// `src` and `dst` (`n × 1`), each row shifted by its value at the
    /// row's largest-`d` neighbour. Softmax over a row is unchanged by the
    /// shift; when a row lies in one LeakyReLU regime its entries reduce to
    /// `slope · (d_j − d_pivot)`, which does not depend on `s_i` at all, so
    /// directions the softmax cannot see stay bitwise flat. Masked entries are
    /// 0 and must be masked again by the softmax.
    pub fn pair_scores(&mut self, src: Var, dst: Var, mask: &[bool], slope: f64) -> Result<Var> {
        let (n, c) = self.value(src).dims2("pair_scores")?;
        if c != 1 || self.value(dst).shape() != [n, 1] || mask.len() != n * n {
            return Err(Error::Shape {
                op: "pair_scores",
                left: self.value(src).shape().to_vec(),
                right: self.value(dst).shape().to_vec(),
            });
        }
        let s = self.value(src).data();
        let d = self.value(dst).data();
        let leaky = |x: f64| if x >= 0.0 { x } else { slope * x };
        let mut pivot = Vec::with_capacity(n);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let row = &mask[i * n..(i + 1) * n];
            let m = (0..n)
                .filter(|&j| row[j])
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if d[b] >= d[j] => Some(b),
                    _ => Some(j),
                })
                .ok_or(Error::DegenerateMask)?;
            pivot.push(m);
            let xm = s[i] + d[m];
            for j in (0..n).filter(|&j| row[j]) {
                let xj = s[i] + d[j];
                out[i * n + j] = if (xj >= 0.0) == (xm >= 0.0) {
                    let r = if xm >= 0.0 { 1.0 } else { slope };
                    r * (d[j] - d[m])
                } else {
                    leaky(xj) - leaky(xm)
                };
            }
        }
        let value = Tensor::new(vec![n, n], out)?;
        Ok(self.push(
            value,
            Op::PairScores {
                src,
                dst,
                mask: mask.to_vec(),
                pivot,
                slope,
            },
        ))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Runs backward and adds every bound parameter's gradient into `store`.
    /// All trainable parameters receive a gradient slot (zeros if unreached).
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore, seed: f64) -> Result<()> {
        let grads = self.backward_seeded(loss, seed)?;
        for p in store.iter_mut() {
            if p.tensor.requires_grad() {
                p.tensor.ensure_grad();
            }
        }
        for (id, v) in &self.bound {
            if let Some(g) = grads.wrt(*v) {
                let t = store.tensor_mut(*id);
                if t.requires_grad() {
                    t.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                let bt = transpose_raw(tb.data(), k, n);
                acc(grads, *a, &matmul_raw(g, &bt, m, n, k));
                let at = transpose_raw(ta.data(), m, k);
                let mut gb = matmul_raw(&at, g, k, m, n);
                if self.faulty {
                    gb.iter_mut().for_each(|x| *x *= 1.5);
                }
                acc(grads, *b, &gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g);
                let n = self.value(*row).numel();
                let mut gr = vec![0.0; n];
                for chunk in g.chunks(n) {
                    gr.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
                }
                acc(grads, *row, &gr);
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a).data(), self.value(*row).data());
                let n = tr.len();
                let mut ga = vec![0.0; g.len()];
                let mut gr = vec![0.0; n];
                for (r, chunk) in g.chunks(n).enumerate() {
                    for k in 0..n {
                        ga[r * n + k] = chunk[k] * tr[k];
                        gr[k] += chunk[k] * ta[r * n + k];
                    }
                }
                acc(grads, *a, &ga);
                acc(grads, *row, &gr);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| c * x).collect();
                acc(grads, *a, &ga);
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = g.iter().zip(tb).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(ta).map(|(x, y)| x * y).collect();
                acc(grads, *a, &ga);
                acc(grads, *b, &gb);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_strides(node.value.shape(), *axis);
                let mut offset = 0;
                let total = node.value.shape()[*axis] * inner;
                for p in parts {
                    let len = self.value(*p).shape()[*axis] * inner;
                    let mut gp = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * total + offset;
                        gp.extend_from_slice(&g[base..base + len]);
                    }
                    acc(grads, *p, &gp);
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                acc(grads, *a, &transpose_raw(g, n, m));
            }
            Op::Narrow { src, axis, start } => {
                let shape = self.value(*src).shape();
                let (outer, full, inner) = axis_strides(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut gs = vec![0.0; self.value(*src).numel()];
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let from = o * len * inner;
                    gs[dst..dst + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                acc(grads, *src, &gs);
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut gt = vec![0.0; t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    gt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(s, x)| *s += x);
                }
                acc(grads, *table, &gt);
            }
            Op::Softmax { src, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_strides(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                acc(grads, *src, &gx);
            }
            Op::LeakyRelu { src, slope } => {
                let x = self.value(*src).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gi, xi)| if *xi >= 0.0 { *gi } else { slope * gi })
                    .collect();
                acc(grads, *src, &gx);
            }
            Op::PairScores {
                src,
                dst,
                mask,
                pivot,
                slope,
            } => {
                let s = self.value(*src).data();
                let d = self.value(*dst).data();
                let n = s.len();
                let dleaky = |x: f64| if x >= 0.0 { 1.0 } else { *slope };
                let mut gs = vec![0.0; n];
                let mut gd = vec![0.0; n];
                for i in 0..n {
                    let m = pivot[i];
                    let lm = dleaky(s[i] + d[m]);
                    for j in (0..n).filter(|&j| mask[i * n + j]) {
                        let lj = dleaky(s[i] + d[j]);
                        let gij = g[i * n + j];
                        gs[i] += gij * (lj - lm);
                        gd[j] += gij * lj;
                        gd[m] -= gij * lm;
                    }
                }
                acc(grads, *src, &gs);
                acc(grads, *dst, &gd);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(gi, s)| gi * s * (1.0 - s)).collect();
                acc(grads, *a, &gx);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gi, xi)| {
                        let u = GELU_K * (xi + GELU_C * xi * xi * xi);
                        let t = u.tanh();
                        let du = GELU_K * (1.0 + 3.0 * GELU_C * xi * xi);
                        gi * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(grads, *a, &gx);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let gx: Vec<f64> = g.iter().zip(x).map(|(gi, xi)| gi / xi).collect();
                acc(grads, *a, &gx);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                acc(grads, *a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                acc(grads, *a, &vec![g[0] / n as f64; n]);
            }
            Op::LayerNorm { src, inv_std } => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; y.len()];
                for (r, inv) in inv_std.iter().enumerate() {
                    let span = r * d..(r + 1) * d;
                    let (gy, yy) = (&g[span.clone()], &y[span.clone()]);
                    let mean_g = gy.iter().sum::<f64>() / d as f64;
                    let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for (k, out) in gx[span].iter_mut().enumerate() {
                        *out = inv * (gy[k] - mean_g - yy[k] * mean_gy);
                    }
                }
                acc(grads, *src, &gx);
            }
            Op::Gather { src, cols } => {
                let n = self.value(*src).cols();
                let mut gx = vec![0.0; self.value(*src).numel()];
                for (i, &c) in cols.iter().enumerate() {
                    gx[i * n + c] += g[i];
                }
                acc(grads, *src, &gx);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Max-subtracted softmax along `axis` with an optional keep-mask.
pub(crate) fn softmax_raw(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    allowed: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let (outer, len, inner) = axis_strides(shape, axis);
    let keep = |k: usize| allowed.map_or(true, |m| m[k]);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                if keep(at(k)) {
                    max = max.max(x[at(k)]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateMask);
            }
            let mut total = 0.0;
            for k in 0..len {
                if keep(at(k)) {
                    let e = (x[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
            }
            for k in 0..len {
                out[at(k)] /= total;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(Tensor::row(&[1.0, 0.0]));
        let b = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b).unwrap_err() {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, 1.0, 1.0]));
        let y = tape.softmax(x, 1, None).unwrap();
        assert!(close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-15));

        let x = tape.constant(Tensor::row(&[0.0, 2f64.ln()]));
        let y = tape.softmax(x, 1, None).unwrap();
        assert!(close(tape.value(y).data(), &[1.0 / 3.0, 2.0 / 3.0], 1e-15));

        let x = tape.constant(Tensor::row(&[5.0, 5.0, 100.0]));
        let y = tape.softmax(x, 1, Some(&[true, true, false])).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn softmax_fully_masked_slice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let err = tape.softmax(x, 1, Some(&[true, false, false, false])).unwrap_err();
        assert!(matches!(err, Error::DegenerateMask));
    }

    #[test]
    fn softmax_along_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap());
        let y = tape.softmax(x, 0, None).unwrap();
        assert!(close(tape.value(y).data(), &[0.5; 4], 1e-15));
    }

    #[test]
    fn leaky_relu_branches() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-1.0, 3.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 3.0, 0.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.2, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.0, 800.0, -800.0]));
        let y = tape.sigmoid(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.5);
        assert!(v[1] <= 1.0 && v[1] > 0.999 && v[1].is_finite());
        assert!(v[2] >= 0.0 && v[2] < 1e-300 + 1e-10);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap()[0], 0.25);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0, 3.0]));
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn reused_variable_sums_paths() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[2.0]));
        let a = tape.scale(x, 3.0);
        let b = tape.scale(x, 5.0);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Rank { .. })));
    }

    #[test]
    fn algebraic_identities() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap());
        let z = tape.constant(Tensor::zeros(&[2, 2]));
        let i = tape.constant(Tensor::identity(2));
        let h = tape.hadamard(a, z).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 4]);
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(a).data());
        let m = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(m).data(), tape.value(a).data());
    }

    #[test]
    fn concat_narrow_and_transpose_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let r = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.value(r).shape(), &[4, 2]);
        let col = tape.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(col).data(), &[2.0, 5.0, 4.0, 6.0]);
        let t = tape.transpose(c).unwrap();
        assert_eq!(tape.value(t).shape(), &[3, 2]);
        assert_eq!(tape.value(t).data(), &[1.0, 3.0, 2.0, 4.0, 5.0, 6.0]);
        assert!(tape.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn embedding_scatter_adds_repeated_rows() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = tape.embedding(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(e).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = tape.sum(e);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(table).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
        assert!(tape.embedding(table, &[2]).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap());
        let y = tape.layer_norm(x).unwrap();
        let v = tape.value(y).data();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }
}
