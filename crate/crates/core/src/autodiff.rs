//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! matrices.
//!
//! A [`Tape`] records every operation in execution order. [`Tape::backward`]
//! walks the record in reverse and accumulates gradients (`+=`) into every
//! node that depends on a `requires_grad` leaf. In [`BackwardMode::Guided`]
//! the pointwise nonlinearities (`relu`, `elu`) additionally drop negative
//! upstream gradients before applying their local derivative.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    #[default]
    Standard,
    Guided,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Elu(Var),
    GatherRows {
        x: Var,
        index: Arc<[usize]>,
    },
    ConcatCols(Vec<Var>),
    SegmentSoftmax {
        scores: Var,
        targets: Arc<[usize]>,
    },
    SegmentWeightedSum {
        values: Var,
        weights: Var,
        targets: Arc<[usize]>,
    },
    PairScores {
        z: Var,
        a: Var,
        targets: Arc<[usize]>,
        sources: Arc<[usize]>,
    },
    GatherWeightedSum {
        values: Var,
        weights: Var,
        targets: Arc<[usize]>,
        sources: Arc<[usize]>,
    },
    MeanRows(Var),
    Sum(Var),
    Pick {
        x: Var,
        index: usize,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

struct Grads<'a> {
    nodes: &'a [Node],
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads<'_> {
    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let len = node.value.data().len();
        f(self.slots[v.0].get_or_insert_with(|| vec![0.0; len]));
    }
}

// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (o, arow) in out.iter_mut().zip(a.chunks_exact(k.max(1))) {
            *o += arow.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        return;
    }
    for (arow, orow) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n.max(1))).take(m) {
        // Four rows of `b` per pass over `orow`.
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            if a0 != 0.0 || a1 != 0.0 || a2 != 0.0 || a3 != 0.0 {
                let rows = &b[p * n..(p + 4) * n];
                let (b0, rest) = rows.split_at(n);
                let (b1, rest) = rest.split_at(n);
                let (b2, b3) = rest.split_at(n);
                for j in 0..n {
                    orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
            }
            p += 4;
        }
        for (p, &av) in arow.iter().enumerate().skip(p) {
            if av != 0.0 {
                for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
    }
}

// out[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        return gemm_nn(a, b, out, m, k, 1);
    }
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, out, m, k, n);
}

// out[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (arow, &bv) in a.chunks_exact(k.max(1)).zip(&b[..m]) {
            for (o, av) in out.iter_mut().zip(arow) {
                *o += av * bv;
            }
        }
        return;
    }
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn check_targets(targets: &[usize], len: usize, n_nodes: usize, what: &str) -> Result<()> {
    if targets.len() != len {
        return Err(Error::Shape(format!(
            "{what}: {} targets for {len} entries",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n_nodes) {
        return Err(Error::Index(format!("{what}: target {t} >= {n_nodes} nodes")));
    }
    Ok(())
}

// Per-node `z · a[..d]` and `z · a[d..]`.
fn half_projections(z: &[f64], a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let dot = |row: &[f64], w: &[f64]| row.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
    z.chunks_exact(d.max(1))
        .map(|row| (dot(row, &a[..d]), dot(row, &a[d..])))
        .unzip()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; all zeros if nothing reached it.
    pub fn grad(&self, v: Var) -> Matrix {
        let (r, c) = self.shape(v);
        match &self.nodes[v.0].grad {
            Some(g) => Matrix::from_vec(r, c, g.clone()).expect("grad shape matches value"),
            None => Matrix::zeros(r, c),
        }
    }

    pub(crate) fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Matrix::from_vec(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · wᵀ + b` with `w` stored as `out × in` and `b` as `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.shape(x), self.shape(w));
        if k != k2 {
            return Err(Error::Shape(format!("linear input {m}x{k} with weight {n}x{k2}")));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            if self.shape(b) != (1, n) {
                return Err(Error::Shape(format!("bias {:?} for {n} outputs", self.shape(b))));
            }
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(n.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        gemm_nt(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let value = Matrix::from_vec(m, n, out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value =
            Matrix::from_vec(v.rows(), v.cols(), v.data().iter().map(|&a| a.max(0.0)).collect()).expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value =
            Matrix::from_vec(v.rows(), v.cols(), v.data().iter().map(|&a| elu(a)).collect()).expect("same shape");
        self.push(value, Op::Elu(x), &[x])
    }

    /// Row `index[i]` of `x` becomes row `i` of the output.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (n, d) = self.shape(x);
        if let Some(&i) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("gather row {i} from {n} rows")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            out.extend_from_slice(src.row(i));
        }
        let value = Matrix::from_vec(index.len(), d, out)?;
        Ok(self.push(value, Op::GatherRows { x, index }, &[x]))
    }

    /// Row-wise concatenation of equally tall parts, in order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero parts".into()));
        };
        let rows = self.shape(first).0;
        if let Some(p) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::Shape(format!(
                "concat part has {} rows, expected {rows}",
                self.shape(*p).0
            )));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Matrix::from_vec(rows, cols, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Softmax of an `E × 1` score column taken separately within each group
    /// of entries sharing a target node.
    pub fn segment_softmax(&mut self, scores: Var, targets: Arc<[usize]>, n_nodes: usize) -> Result<Var> {
        let (e, c) = self.shape(scores);
        if c != 1 {
            return Err(Error::Shape(format!("segment_softmax expects E x 1, got {e}x{c}")));
        }
        check_targets(&targets, e, n_nodes, "segment_softmax")?;
        let s = self.value(scores).data();
        let mut max = vec![f64::NEG_INFINITY; n_nodes];
        for (&t, &v) in targets.iter().zip(s) {
            max[t] = max[t].max(v);
        }
        let mut out: Vec<f64> = targets.iter().zip(s).map(|(&t, &v)| (v - max[t]).exp()).collect();
        let mut denom = vec![0.0; n_nodes];
        for (&t, &v) in targets.iter().zip(&out) {
            denom[t] += v;
        }
        for (o, &t) in out.iter_mut().zip(targets.iter()) {
            *o /= denom[t];
        }
        let value = Matrix::from_vec(e, 1, out)?;
        Ok(self.push(value, Op::SegmentSoftmax { scores, targets }, &[scores]))
    }

    /// Row `i` of the `n_nodes × D` output is `Σ weights[e] · values[e]` over
    /// entries `e` targeting node `i`.
    pub fn segment_weighted_sum(
        &mut self,
        values: Var,
        weights: Var,
        targets: Arc<[usize]>,
        n_nodes: usize,
    ) -> Result<Var> {
        let ((e, d), (e2, c)) = (self.shape(values), self.shape(weights));
        if e != e2 || c != 1 {
            return Err(Error::Shape(format!(
                "segment_weighted_sum values {e}x{d} with weights {e2}x{c}"
            )));
        }
        check_targets(&targets, e, n_nodes, "segment_weighted_sum")?;
        let (vals, w) = (self.value(values), self.value(weights).data());
        let mut out = vec![0.0; n_nodes * d];
        for (k, &t) in targets.iter().enumerate() {
            for (o, v) in out[t * d..(t + 1) * d].iter_mut().zip(vals.row(k)) {
                *o += w[k] * v;
            }
        }
        let value = Matrix::from_vec(n_nodes, d, out)?;
        Ok(self.push(
            value,
            Op::SegmentWeightedSum {
                values,
                weights,
                targets,
            },
            &[values, weights],
        ))
    }

    /// Entry `e` of the `E × 1` output is `[z[targets[e]] ‖ z[sources[e]]] · a`,
    /// the same as gathering both row sets, concatenating and multiplying by
    /// `a`, without materializing the `E × 2D` pair matrix.
    pub fn pair_scores(&mut self, z: Var, a: Var, targets: Arc<[usize]>, sources: Arc<[usize]>) -> Result<Var> {
        let ((n, d), (a_rows, a_cols)) = (self.shape(z), self.shape(a));
        if a_rows != 2 * d || a_cols != 1 {
            return Err(Error::Shape(format!("pair_scores z {n}x{d} with a {a_rows}x{a_cols}")));
        }
        check_targets(&targets, sources.len(), n, "pair_scores")?;
        check_targets(&sources, targets.len(), n, "pair_scores")?;
        let (u, v) = half_projections(self.value(z).data(), self.value(a).data(), d);
        let out = targets.iter().zip(sources.iter()).map(|(&t, &s)| u[t] + v[s]).collect();
        let value = Matrix::from_vec(targets.len(), 1, out)?;
        Ok(self.push(value, Op::PairScores { z, a, targets, sources }, &[z, a]))
    }

    /// Row `i` of the `n_nodes × D` output is `Σ weights[e] · values[sources[e]]`
    /// over entries `e` targeting node `i`.
    pub fn gather_weighted_sum(
        &mut self,
        values: Var,
        weights: Var,
        targets: Arc<[usize]>,
        sources: Arc<[usize]>,
        n_nodes: usize,
    ) -> Result<Var> {
        let ((n, d), (e, c)) = (self.shape(values), self.shape(weights));
        if c != 1 {
            return Err(Error::Shape(format!("gather_weighted_sum weights {e}x{c}")));
        }
        check_targets(&targets, e, n_nodes, "gather_weighted_sum")?;
        check_targets(&sources, e, n, "gather_weighted_sum")?;
        let (vals, w) = (self.value(values), self.value(weights).data());
        let mut out = vec![0.0; n_nodes * d];
        for (k, (&t, &s)) in targets.iter().zip(sources.iter()).enumerate() {
            for (o, v) in out[t * d..(t + 1) * d].iter_mut().zip(vals.row(s)) {
                *o += w[k] * v;
            }
        }
        let value = Matrix::from_vec(n_nodes, d, out)?;
        Ok(self.push(
            value,
            Op::GatherWeightedSum {
                values,
                weights,
                targets,
                sources,
            },
            &[values, weights],
        ))
    }

    /// Column means, as a `1 × D` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if n == 0 {
            return Err(Error::Empty("mean over zero rows".into()));
        }
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(self.value(x).row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let value = Matrix::from_vec(1, d, out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]).expect("scalar"), Op::Sum(x), &[x])
    }

    /// Scalar holding element `index` (row-major) of `x`.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let len = self.value(x).data().len();
        let v = *self
            .value(x)
            .data()
            .get(index)
            .ok_or_else(|| Error::Index(format!("pick {index} from {len} values")))?;
        Ok(self.push(Matrix::from_vec(1, 1, vec![v])?, Op::Pick { x, index }, &[x]))
    }

    /// `−log softmax(logits)[target]` for a single row (or column) of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::Index(format!("target {target} for {} classes", z.len())));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss])?,
            Op::CrossEntropy { logits, target },
            &[logits],
        ))
    }

    /// Propagates `d root / d ·` into every node that needs a gradient.
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var, mode: BackwardMode) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Index(format!("root {} not on tape", root.0)));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                self.shape(root)
            )));
        }
        // This pass writes into fresh buffers so earlier gradients are not re-propagated.
        let mut grads = Grads {
            nodes: &self.nodes,
            slots: vec![None; root.0 + 1],
        };
        grads.accumulate(root, |g| g[0] += 1.0);
        let guided = mode == BackwardMode::Guided;
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            self.backward_op(i, &g, &mut grads, guided);
            grads.slots[i] = Some(g);
        }
        let slots = grads.slots;
        for (node, new) in self.nodes.iter_mut().zip(slots) {
            match (&mut node.grad, new) {
                (Some(g), Some(n)) => g.iter_mut().zip(n).for_each(|(a, b)| *a += b),
                (slot @ None, Some(n)) => *slot = Some(n),
                _ => {}
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut Grads, guided: bool) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.shape(*a), self.shape(*b));
                let bv = self.value(*b).data();
                grads.accumulate(*a, |ga| gemm_nt(g, bv, ga, m, n, k));
                let av = self.value(*a).data();
                grads.accumulate(*b, |gb| gemm_tn(av, g, gb, m, k, n));
            }
            Op::Linear { x, w, b } => {
                let ((m, k), (n, _)) = (self.shape(*x), self.shape(*w));
                let wv = self.value(*w).data();
                grads.accumulate(*x, |gx| gemm_nn(g, wv, gx, m, n, k));
                let xv = self.value(*x).data();
                grads.accumulate(*w, |gw| gemm_tn(g, xv, gw, m, n, k));
                if let Some(b) = b {
                    grads.accumulate(*b, |gb| {
                        for row in g.chunks_exact(n) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                grads.accumulate(*x, |gx| {
                    for ((o, &up), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        let up = if guided { up.max(0.0) } else { up };
                        if xi > 0.0 {
                            *o += up;
                        }
                    }
                });
            }
            Op::Elu(x) => {
                let xv = self.value(*x).data();
                grads.accumulate(*x, |gx| {
                    for ((o, &up), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        let up = if guided { up.max(0.0) } else { up };
                        *o += if xi > 0.0 { up } else { up * xi.exp() };
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let d = self.shape(*x).1;
                grads.accumulate(*x, |gx| {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, v) in gx[src * d..(src + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = self.shape(Var(i)).0;
                let total = self.shape(Var(i)).1;
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    grads.accumulate(*p, |gp| {
                        for r in 0..rows {
                            for (o, v) in gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * total + offset..r * total + offset + w])
                            {
                                *o += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SegmentSoftmax { scores, targets } => {
                let alpha = self.value(Var(i)).data().to_vec();
                let n = targets.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n];
                for ((&t, a), up) in targets.iter().zip(&alpha).zip(g) {
                    dot[t] += a * up;
                }
                grads.accumulate(*scores, |gs| {
                    for (k, &t) in targets.iter().enumerate() {
                        gs[k] += alpha[k] * (g[k] - dot[t]);
                    }
                });
            }
            Op::SegmentWeightedSum {
                values,
                weights,
                targets,
            } => {
                let d = self.shape(*values).1;
                let w = self.value(*weights).data();
                grads.accumulate(*values, |gv| {
                    for (k, &t) in targets.iter().enumerate() {
                        for (o, up) in gv[k * d..(k + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d]) {
                            *o += w[k] * up;
                        }
                    }
                });
                let vals = self.value(*values).data();
                grads.accumulate(*weights, |gw| {
                    for (k, &t) in targets.iter().enumerate() {
                        gw[k] += vals[k * d..(k + 1) * d]
                            .iter()
                            .zip(&g[t * d..(t + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
            }
            Op::PairScores { z, a, targets, sources } => {
                let (n, d) = self.shape(*z);
                let (mut gt, mut gs) = (vec![0.0; n], vec![0.0; n]);
                for ((&t, &s), up) in targets.iter().zip(sources.iter()).zip(g) {
                    gt[t] += up;
                    gs[s] += up;
                }
                let (zv, av) = (self.value(*z).data(), self.value(*a).data());
                grads.accumulate(*z, |gz| {
                    for ((row, &ct), &cs) in gz.chunks_exact_mut(d.max(1)).zip(&gt).zip(&gs) {
                        for ((o, a1), a2) in row.iter_mut().zip(&av[..d]).zip(&av[d..]) {
                            *o += ct * a1 + cs * a2;
                        }
                    }
                });
                grads.accumulate(*a, |ga| {
                    let (ga1, ga2) = ga.split_at_mut(d);
                    for ((row, &ct), &cs) in zv.chunks_exact(d.max(1)).zip(&gt).zip(&gs) {
                        for ((o1, o2), x) in ga1.iter_mut().zip(ga2.iter_mut()).zip(row) {
                            *o1 += ct * x;
                            *o2 += cs * x;
                        }
                    }
                });
            }
            Op::GatherWeightedSum {
                values,
                weights,
                targets,
                sources,
            } => {
                let d = self.shape(*values).1;
                let w = self.value(*weights).data();
                grads.accumulate(*values, |gv| {
                    for (k, (&t, &s)) in targets.iter().zip(sources.iter()).enumerate() {
                        for (o, up) in gv[s * d..(s + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d]) {
                            *o += w[k] * up;
                        }
                    }
                });
                let vals = self.value(*values).data();
                grads.accumulate(*weights, |gw| {
                    for (k, (&t, &s)) in targets.iter().zip(sources.iter()).enumerate() {
                        gw[k] += vals[s * d..(s + 1) * d]
                            .iter()
                            .zip(&g[t * d..(t + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
            }
            Op::MeanRows(x) => {
                let (n, d) = self.shape(*x);
                grads.accumulate(*x, |gx| {
                    for r in 0..n {
                        for (o, up) in gx[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *o += up / n as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => grads.accumulate(*x, |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Pick { x, index } => grads.accumulate(*x, |gx| gx[*index] += g[0]),
            Op::CrossEntropy { logits, target } => {
                let z = self.value(*logits).data();
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                grads.accumulate(*logits, |gz| {
                    for (k, (o, e)) in gz.iter_mut().zip(&exps).enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        *o += g[0] * (e / total - onehot);
                    }
                });
            }
        }
    }
}
