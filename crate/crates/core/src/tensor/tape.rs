use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{matmul, matmul_nt, matmul_tn};
use super::{Tensor, TensorError};
use crate::Real;

/// Added to the logits of hidden keys before normalization.
pub const MASK_PENALTY: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    AddBroadcast { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulBroadcast { a: Var, b: Var },
    Scale { a: Var, k: S },
    SoftmaxMasked { a: Var, cols: usize },
    LayerNorm { a: Var, cols: usize, rstd: Vec<S> },
    Gelu { a: Var },
    Embedding { table: Var, idx: Vec<usize>, cols: usize },
    Dropout { a: Var, keep: Vec<S> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<S>, cols: usize },
    GatherCols { a: Var, idx: Vec<usize>, in_cols: usize, out_cols: usize },
    SliceCols { a: Var, start: usize, in_cols: usize, out_cols: usize },
    ConcatCols { parts: Vec<(Var, usize)>, cols: usize },
    SelectRows { a: Var, rows: Vec<usize>, cols: usize },
    ConcatRows { parts: Vec<Var> },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records operations for one computation graph.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    empty_rows: usize,
}

/// Gradients indexed by [`Var`], produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Gradients<S> {
    /// `None` when `var` does not require a gradient or was not reached.
    pub fn get(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<S>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), empty_rows: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Softmax rows so far that had no visible key (returned as all-zero rows).
    pub fn empty_softmax_rows(&self) -> usize {
        self.empty_rows
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        self.nodes[v.0].value.dims2(op)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![S::ZERO; m * n];
        matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![S::ZERO; m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt { a, b, m, k, n }, &[a, b]))
    }

    /// Elementwise sum. When `b`'s shape is a proper trailing suffix of `a`'s, or
    /// `b` is `[1, ..]` matching `a` after the first axis, it is broadcast over the
    /// leading axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
            let shape = sa.to_vec();
            return Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, &[a, b]));
        }
        let width = self.broadcast_width("add", a, b)?;
        let bd = self.value(b).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x + bd[i % width]).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::AddBroadcast { a, b }, &[a, b]))
    }

    /// Elementwise product, broadcasting like [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
            let shape = sa.to_vec();
            return Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, &[a, b]));
        }
        let width = self.broadcast_width("mul", a, b)?;
        let bd = self.value(b).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x * bd[i % width]).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::MulBroadcast { a, b }, &[a, b]))
    }

    fn broadcast_width(&self, op: &'static str, a: Var, b: Var) -> Result<usize, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let row_vector = sb.len() == sa.len() && sb.len() > 1 && sb[0] == 1 && sb[1..] == sa[1..];
        if row_vector || (sb.len() < sa.len() && sa.ends_with(sb) && !sb.is_empty()) {
            Ok(sb.iter().product())
        } else {
            Err(shape_err(op, sa, sb))
        }
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let value = &self.value(a);
        let data = value.data().iter().map(|&x| x * k).collect();
        let shape = value.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale { a, k }, &[a])
    }

    /// Softmax over the last axis where `visible[i] == false` entries get
    /// [`MASK_PENALTY`] added first (and so probability zero). Rows with no visible
    /// entry become all-zero and are counted in [`Tape::empty_softmax_rows`].
    pub fn softmax_masked(&mut self, a: Var, visible: &[bool]) -> Result<Var, TensorError> {
        let value = self.value(a);
        if visible.len() != value.numel() {
            return Err(TensorError::MaskLength { op: "softmax_masked", mask: visible.len(), len: value.numel() });
        }
        let cols =
            *value.shape().last().ok_or_else(|| TensorError::NotMatrix { op: "softmax_masked", shape: Vec::new() })?;
        let penalty = S::from_f64(MASK_PENALTY);
        let mut out = vec![S::ZERO; value.numel()];
        let mut empty = 0;
        for (r, row) in value.data().chunks(cols.max(1)).enumerate() {
            let vis = &visible[r * cols..(r + 1) * cols];
            if !vis.iter().any(|&v| v) {
                empty += 1;
                continue;
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut max = None::<S>;
            for ((dst, &x), &v) in o.iter_mut().zip(row).zip(vis) {
                *dst = if v { x } else { x + penalty };
                max = Some(match max {
                    Some(m) => m.max(*dst),
                    None => *dst,
                });
            }
            let max = max.unwrap_or(S::ZERO);
            let mut sum = S::ZERO;
            for dst in o.iter_mut() {
                *dst = (*dst - max).exp();
                sum += *dst;
            }
            for dst in o.iter_mut() {
                *dst /= sum;
            }
        }
        let shape = value.shape().to_vec();
        self.empty_rows += empty;
        Ok(self.push(Tensor { shape, data: out }, Op::SoftmaxMasked { a, cols }, &[a]))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: S) -> Result<Var, TensorError> {
        let value = self.value(a);
        let cols =
            *value.shape().last().ok_or_else(|| TensorError::NotMatrix { op: "layer_norm", shape: Vec::new() })?;
        let n = S::from_f64(cols as f64);
        let mut out = vec![S::ZERO; value.numel()];
        let mut rstds = Vec::with_capacity(value.numel() / cols.max(1));
        for (row, o) in value.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let mut mean = S::ZERO;
            for &x in row {
                mean += x;
            }
            mean /= n;
            let mut var = S::ZERO;
            for &x in row {
                var += (x - mean) * (x - mean);
            }
            var /= n;
            let rstd = S::ONE / (var + eps).sqrt();
            for (dst, &x) in o.iter_mut().zip(row) {
                *dst = (x - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let shape = value.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { a, cols, rstd: rstds }, &[a]))
    }

    /// `x · Φ(x)` with the exact normal CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let half = S::from_f64(0.5);
        let inv_sqrt2 = S::from_f64(core::f64::consts::FRAC_1_SQRT_2);
        let data = value.data().iter().map(|&x| half * x * (S::ONE + (x * inv_sqrt2).erf())).collect();
        let shape = value.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Gelu { a }, &[a])
    }

    /// Rows of `table` selected by `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2(table, "embedding")?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { op: "embedding", index: i, bound: rows });
            }
            out.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        let op = Op::Embedding { table, idx: indices.to_vec(), cols };
        Ok(self.push(Tensor { shape: vec![indices.len(), cols], data: out }, op, &[table]))
    }

    /// Inverted dropout; the identity when `!train` or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return a;
        }
        let scale = S::from_f64(1.0 / (1.0 - rate));
        let value = self.value(a);
        let keep: Vec<S> =
            (0..value.numel()).map(|_| if rng.random::<f64>() < rate { S::ZERO } else { scale }).collect();
        let data = value.data().iter().zip(&keep).map(|(&x, &k)| x * k).collect();
        let shape = value.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Dropout { a, keep }, &[a])
    }

    /// Mean over rows of `-log softmax(logits)[target]`; a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2(logits, "cross_entropy")?;
        if rows != targets.len() {
            return Err(shape_err("cross_entropy", &[rows, cols], &[targets.len()]));
        }
        let x = self.value(logits).data();
        let mut probs = vec![S::ZERO; rows * cols];
        let mut total = S::ZERO;
        for r in 0..rows {
            let t = targets[r];
            if t >= cols {
                return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: t, bound: cols });
            }
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(row[0], S::max);
            let p = &mut probs[r * cols..(r + 1) * cols];
            let mut sum = S::ZERO;
            for (dst, &v) in p.iter_mut().zip(row) {
                *dst = (v - max).exp();
                sum += *dst;
            }
            for dst in p.iter_mut() {
                *dst /= sum;
            }
            total += sum.ln() + max - row[t];
        }
        let loss = if rows == 0 { S::ZERO } else { total / S::from_f64(rows as f64) };
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs, cols };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// `out[i][j] = a[i][index[i·n + j]]` for `a[m×c]`, giving `m×n`.
    pub fn gather_cols(&mut self, a: Var, index: &[usize], n: usize) -> Result<Var, TensorError> {
        let (m, c) = self.dims2(a, "gather_cols")?;
        if index.len() != m * n {
            return Err(shape_err("gather_cols", &[m, c], &[index.len()]));
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &col in &index[i * n..(i + 1) * n] {
                if col >= c {
                    return Err(TensorError::IndexOutOfRange { op: "gather_cols", index: col, bound: c });
                }
                out.push(ad[i * c + col]);
            }
        }
        let op = Op::GatherCols { a, idx: index.to_vec(), in_cols: c, out_cols: n };
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, op, &[a]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, c) = self.dims2(a, "slice_cols")?;
        if start + len > c {
            return Err(TensorError::IndexOutOfRange { op: "slice_cols", index: start + len, bound: c });
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&ad[i * c + start..i * c + start + len]);
        }
        let op = Op::SliceCols { a, start, in_cols: c, out_cols: len };
        Ok(self.push(Tensor { shape: vec![m, len], data: out }, op, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyConcat)?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pc) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(shape_err("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push((p, pc));
        }
        let cols: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(m * cols);
        for i in 0..m {
            for &(p, pc) in &widths {
                out.extend_from_slice(&self.value(p).data()[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(Tensor { shape: vec![m, cols], data: out }, Op::ConcatCols { parts: widths, cols }, parts))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (m, c) = self.dims2(a, "select_rows")?;
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= m {
                return Err(TensorError::IndexOutOfRange { op: "select_rows", index: r, bound: m });
            }
            out.extend_from_slice(&ad[r * c..(r + 1) * c]);
        }
        let op = Op::SelectRows { a, rows: rows.to_vec(), cols: c };
        Ok(self.push(Tensor { shape: vec![rows.len(), c], data: out }, op, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyConcat)?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(shape_err("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let op = Op::ConcatRows { parts: parts.to_vec() };
        Ok(self.push(Tensor { shape: vec![rows, c], data: out }, op, parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut total = S::ZERO;
        for &x in self.value(a).data() {
            total += x;
        }
        self.push(Tensor::scalar(total), Op::Sum { a }, &[a])
    }

    /// Gradients of a scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::ONE]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Unreached leaves that require a gradient get zeros.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![S::ZERO; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![S::ZERO; nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |ga| matmul_nt(g, val(b), m, n, k, ga));
                acc(b, &mut |gb| matmul_tn(val(a), g, m, k, n, gb));
            }
            &Op::MatMulNt { a, b, m, k, n } => {
                acc(a, &mut |ga| matmul(g, val(b), m, n, k, ga));
                acc(b, &mut |gb| matmul_tn(g, val(a), m, n, k, gb));
            }
            &Op::Add { a, b } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
            }
            &Op::AddBroadcast { a, b } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                acc(b, &mut |gb| {
                    let w = gb.len();
                    for (i, &x) in g.iter().enumerate() {
                        gb[i % w] += x;
                    }
                });
            }
            &Op::Mul { a, b } => {
                acc(a, &mut |ga| {
                    for ((d, &x), &y) in ga.iter_mut().zip(g).zip(val(b)) {
                        *d += x * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((d, &x), &y) in gb.iter_mut().zip(g).zip(val(a)) {
                        *d += x * y;
                    }
                });
            }
            &Op::MulBroadcast { a, b } => {
                let bd = val(b);
                let w = bd.len();
                acc(a, &mut |ga| {
                    for (i, (d, &x)) in ga.iter_mut().zip(g).enumerate() {
                        *d += x * bd[i % w];
                    }
                });
                acc(b, &mut |gb| {
                    for (i, (&x, &y)) in g.iter().zip(val(a)).enumerate() {
                        gb[i % w] += x * y;
                    }
                });
            }
            &Op::Scale { a, k } => acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x * k)),
            &Op::SoftmaxMasked { a, cols } => {
                let p = node.value.data();
                acc(a, &mut |ga| {
                    for r in 0..p.len() / cols.max(1) {
                        let pr = &p[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut dot = S::ZERO;
                        for (&pi, &gi) in pr.iter().zip(gr) {
                            dot += pi * gi;
                        }
                        for ((d, &pi), &gi) in ga[r * cols..(r + 1) * cols].iter_mut().zip(pr).zip(gr) {
                            *d += pi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, cols, rstd } => {
                let (cols, y) = (*cols, node.value.data());
                let n = S::from_f64(cols as f64);
                acc(*a, &mut |ga| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let (mut mg, mut mgy) = (S::ZERO, S::ZERO);
                        for (&yi, &gi) in yr.iter().zip(gr) {
                            mg += gi;
                            mgy += gi * yi;
                        }
                        mg /= n;
                        mgy /= n;
                        for ((d, &yi), &gi) in ga[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
                            *d += rs * (gi - mg - yi * mgy);
                        }
                    }
                });
            }
            &Op::Gelu { a } => {
                let half = S::from_f64(0.5);
                let inv_sqrt2 = S::from_f64(core::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt_2pi = S::from_f64(0.398_942_280_401_432_7);
                acc(a, &mut |ga| {
                    for ((d, &x), &gi) in ga.iter_mut().zip(val(a)).zip(g) {
                        let cdf = half * (S::ONE + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-(half * x * x)).exp();
                        *d += gi * (cdf + x * pdf);
                    }
                });
            }
            Op::Embedding { table, idx, cols } => {
                let cols = *cols;
                acc(*table, &mut |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &x) in gt[i * cols..(i + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Dropout { a, keep } => acc(*a, &mut |ga| {
                for ((d, &x), &k) in ga.iter_mut().zip(g).zip(keep) {
                    *d += x * k;
                }
            }),
            Op::CrossEntropy { logits, targets, probs, cols } => {
                let cols = *cols;
                let rows = targets.len();
                let scale = g[0] / S::from_f64(rows.max(1) as f64);
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, d) in gl[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                            let onehot = if c == t { S::ONE } else { S::ZERO };
                            *d += (probs[r * cols + c] - onehot) * scale;
                        }
                    }
                });
            }
            Op::GatherCols { a, idx, in_cols, out_cols } => {
                let (c, n) = (*in_cols, *out_cols);
                acc(*a, &mut |ga| {
                    for (k, (&col, &x)) in idx.iter().zip(g).enumerate() {
                        ga[(k / n) * c + col] += x;
                    }
                });
            }
            &Op::SliceCols { a, start, in_cols, out_cols } => acc(a, &mut |ga| {
                for (i, row) in g.chunks(out_cols).enumerate() {
                    for (d, &x) in ga[i * in_cols + start..i * in_cols + start + out_cols].iter_mut().zip(row) {
                        *d += x;
                    }
                }
            }),
            Op::ConcatCols { parts, cols } => {
                let mut offset = 0;
                for &(p, pc) in parts {
                    acc(p, &mut |gp| {
                        for (i, row) in gp.chunks_mut(pc).enumerate() {
                            for (d, &x) in row.iter_mut().zip(&g[i * cols + offset..i * cols + offset + pc]) {
                                *d += x;
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SelectRows { a, rows, cols } => {
                let cols = *cols;
                acc(*a, &mut |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, &x) in ga[r * cols..(r + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                            *d += x;
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    acc(p, &mut |gp| {
                        for (d, &x) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *d += x;
                        }
                    });
                    offset += len;
                }
            }
            &Op::Sum { a } => acc(a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
        }
    }
}
