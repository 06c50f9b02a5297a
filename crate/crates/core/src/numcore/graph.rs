use std::collections::HashMap;

use super::tensor::dims2;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs in
/// [`Graph::cross_entropy`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    CrossEntropy { probs: Var, targets: Vec<usize> },
    Sum(Var),
    Transpose(Var),
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { input: Var, rows: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation (tape). Nodes are appended in evaluation order, so
/// operands always precede their consumers; [`Graph::backward`] walks the tape
/// once in reverse.
///
/// A graph is bound to at most one [`ParamStore`]; parameters are inserted as
/// leaves on first use and cached.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    bound: HashMap<ParamId, Var>,
    visits: Vec<u32>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Copies a node's value out as a tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are valid")
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    /// Per-node visit counts from the most recent backward pass.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf holding a copy of `t`; gradients are tracked when
    /// `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a constant leaf (never receives gradient).
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        Ok(self.input(&t))
    }

    /// Leaf for a stored parameter, created once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true);
        self.bound.insert(id, v);
        v
    }

    /// Adds `scale` times each bound parameter's leaf gradient into its
    /// tensor's grad buffer.
    pub fn accumulate_grads(&self, store: &mut ParamStore, scale: f64) {
        for (&id, &v) in &self.bound {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                let dst = store.get_mut(id).grad_mut();
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += scale * s;
                }
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    /// `a[m×n] + bias[n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        if self.value(bias).len() != n || self.shape(a).len() != 2 {
            return Err(Error::Dimension {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % n])
            .collect();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), rg)
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, false)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked
    /// entries are exactly zero.
    pub fn softmax_rows_causal(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, true)
    }

    fn softmax_impl(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.shape(a).len() != 2 || n == 0 {
            return Err(Error::contract("softmax_rows expects a matrix with n >= 1"));
        }
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let width = if causal { (i + 1).min(n) } else { n };
            let row = &x[i * n..i * n + width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * n..i * n + width];
            let mut total = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![m, n], out, Op::Softmax(a), rg))
    }

    /// Mean negative log-likelihood `-(1/N) Σ_i ln(max(p[i][t_i], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(probs);
        if self.shape(probs).len() != 2 || targets.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape(probs).to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index {
                what: "class",
                index: bad,
                bound: c,
            });
        }
        let p = self.value(probs);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p[i * c + t].max(LOG_CLAMP).ln())
            .sum();
        let rg = self.rg(probs);
        Ok(self.push(
            vec![1],
            vec![total / n as f64],
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::contract("transpose expects a matrix"));
        }
        let (m, n) = self.dims(a);
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.shape(a).len() != 2 || start >= end || end > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: self.shape(a).to_vec(),
                right: vec![start, end],
            });
        }
        let x = self.value(a);
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![m, w], out, Op::SliceCols { input: a, start }, rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let m = self.dims(first).0;
        for &p in parts {
            if self.shape(p).len() != 2 || self.dims(p).0 != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let w = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Selects rows (with repetition allowed), e.g. an embedding lookup.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.shape(a).len() != 2 || rows.is_empty() {
            return Err(Error::contract("gather_rows expects a matrix and at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Index {
                what: "row",
                index: bad,
                bound: m,
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&x[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            vec![rows.len(), n],
            out,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients accumulate
    /// across calls; intermediate gradients are scratch for a single pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        self.visits = vec![0; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            self.visits[i] += 1;
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            debug_assert!(g.iter().all(|x| x.is_finite()), "non-finite gradient");
            match &node.op {
                Op::Leaf => {
                    let slot = self
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for (s, x) in slot.iter_mut().zip(&g) {
                        *s += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(&self.nodes[a.0].shape);
                    let n = dims2(&self.nodes[b.0].shape).1;
                    if self.nodes[a.0].requires_grad {
                        let bv = &self.nodes[b.0].value;
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for t in 0..k {
                                da[r * k + t] = dot(grow, &bv[t * n..(t + 1) * n]);
                            }
                        }
                        add_into(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let av = &self.nodes[a.0].value;
                        let mut db = vec![0.0; k * n];
                        for r in 0..m {
                            for t in 0..k {
                                let x = av[r * k + t];
                                if x == 0.0 {
                                    continue;
                                }
                                let grow = &g[r * n..(r + 1) * n];
                                for (d, &y) in db[t * n..(t + 1) * n].iter_mut().zip(grow) {
                                    *d += x * y;
                                }
                            }
                        }
                        add_into(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, g.clone());
                    add_into(&mut grads, *b, g);
                }
                Op::AddRow(a, bias) => {
                    let n = self.nodes[bias.0].value.len();
                    let mut db = vec![0.0; n];
                    for (j, x) in g.iter().enumerate() {
                        db[j % n] += x;
                    }
                    add_into(&mut grads, *bias, db);
                    add_into(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, &self.nodes[b.0].value, |x, y| x * y);
                    let db = zip_map(&g, &self.nodes[a.0].value, |x, y| x * y);
                    add_into(&mut grads, *a, da);
                    add_into(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    add_into(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    add_into(&mut grads, *a, da);
                }
                Op::Softmax(input) => {
                    let y = &node.value;
                    let (m, n) = dims2(&node.shape);
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dx[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    add_into(&mut grads, *input, dx);
                }
                Op::CrossEntropy { probs, targets } => {
                    let p = &self.nodes[probs.0].value;
                    let (n, c) = dims2(&self.nodes[probs.0].shape);
                    let mut dp = vec![0.0; n * c];
                    for (r, &t) in targets.iter().enumerate() {
                        let pt = p[r * c + t];
                        if pt > LOG_CLAMP {
                            dp[r * c + t] = -g[0] / (n as f64 * pt);
                        }
                    }
                    add_into(&mut grads, *probs, dp);
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    add_into(&mut grads, *a, vec![g[0]; len]);
                }
                Op::Transpose(a) => {
                    let (m, n) = dims2(&self.nodes[a.0].shape);
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            da[r * n + c] = g[c * m + r];
                        }
                    }
                    add_into(&mut grads, *a, da);
                }
                Op::SliceCols { input, start } => {
                    let (m, n) = dims2(&self.nodes[input.0].shape);
                    let w = dims2(&node.shape).1;
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    add_into(&mut grads, *input, da);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = dims2(&node.shape);
                    let mut offset = 0;
                    for p in parts {
                        let w = dims2(&self.nodes[p.0].shape).1;
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut grads, *p, dp);
                        offset += w;
                    }
                }
                Op::GatherRows { input, rows } => {
                    let (m, n) = dims2(&self.nodes[input.0].shape);
                    let mut da = vec![0.0; m * n];
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..n {
                            da[r * n + c] += g[k * n + c];
                        }
                    }
                    add_into(&mut grads, *input, da);
                }
            }
        }
        Ok(())
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let x = a[i * k + t];
            if x == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}
