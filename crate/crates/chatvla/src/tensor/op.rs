//! Forward operations and the reverse-mode backward pass.
//!
//! The op suite is fixed: add, mul, matmul, transpose, reshape, slice/concat
//! (rows and columns), softmax (last axis), layer-norm (last axis with
//! learnable gain/bias), GELU (tanh approximation), embedding lookup,
//! cross-entropy with integer targets, mean-squared error, scalar scale, and
//! trailing-axis bias addition. A node is linked into the graph only when at
//! least one input requires gradients; otherwise the result is a plain leaf.

use std::collections::{HashMap, HashSet};

use super::{Tensor, TensorError};

const GELU_S2P: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Producing operation of a graph node, holding handles to its inputs.
pub enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Reshape(Tensor),
    SliceRows { x: Tensor, start: usize },
    SliceCols { x: Tensor, start: usize },
    ConcatRows(Vec<Tensor>),
    ConcatCols(Vec<Tensor>),
    Softmax(Tensor),
    LayerNorm { x: Tensor, gain: Tensor, bias: Tensor, eps: f64 },
    Gelu(Tensor),
    Embedding { table: Tensor, ids: Vec<usize> },
    CrossEntropy { logits: Tensor, targets: Vec<usize> },
    Mse { pred: Tensor, target: Tensor },
    Scale(Tensor, f64),
    AddBias { x: Tensor, bias: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Transpose(x) | Op::Reshape(x) | Op::Softmax(x) | Op::Gelu(x) => vec![x],
            Op::SliceRows { x, .. } | Op::SliceCols { x, .. } => vec![x],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.iter().collect(),
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Embedding { table, .. } => vec![table],
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Mse { pred, target } => vec![pred, target],
            Op::Scale(x, _) => vec![x],
            Op::AddBias { x, bias } => vec![x, bias],
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn result_of(
    shape: Vec<usize>,
    data: Vec<f64>,
    inputs_require: bool,
    op: Op,
) -> Tensor {
    if inputs_require {
        Tensor::make(shape, data, true, op)
    } else {
        Tensor::make(shape, data, false, Op::Leaf)
    }
}

/// C[m,n] += A[m,k] * B[k,n], row-major. The `ikj` ordering keeps the inner
/// loop contiguous in both B and C so it vectorizes.
fn matmul_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..cols {
            let e = (row[c] - max).exp();
            out[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            out[r * cols + c] /= sum;
        }
    }
    out
}

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_S2P * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_S2P * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = GELU_S2P * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(mismatch("add", self, other));
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad() || other.requires_grad(),
            Op::Add(self.clone(), other.clone()),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(mismatch("mul", self, other));
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad() || other.requires_grad(),
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || other.shape().len() != 2 || self.shape()[1] != other.shape()[0]
        {
            return Err(mismatch("matmul", self, other));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let mut data = vec![0.0; m * n];
        matmul_into(&mut data, &self.data(), &other.data(), m, k, n);
        Ok(result_of(
            vec![m, n],
            data,
            self.requires_grad() || other.requires_grad(),
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: self.shape().to_vec(),
                reason: "rank must be 2".into(),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_data(&self.data(), r, c);
        Ok(result_of(
            vec![c, r],
            data,
            self.requires_grad(),
            Op::Transpose(self.clone()),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        super::validate_shape("reshape", shape)?;
        if super::numel_of(shape) != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("element count {} != {}", super::numel_of(shape), self.numel()),
            });
        }
        Ok(result_of(
            shape.to_vec(),
            self.to_vec(),
            self.requires_grad(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Contiguous row range of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                shape: self.shape().to_vec(),
                reason: "rank must be 2".into(),
            });
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        if len == 0 || start + len > rows {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: start + len,
                size: rows,
            });
        }
        let data = self.data()[start * cols..(start + len) * cols].to_vec();
        Ok(result_of(
            vec![len, cols],
            data,
            self.requires_grad(),
            Op::SliceRows { x: self.clone(), start },
        ))
    }

    /// Contiguous column range of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: self.shape().to_vec(),
                reason: "rank must be 2".into(),
            });
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        if len == 0 || start + len > cols {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: start + len,
                size: cols,
            });
        }
        let src = self.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(result_of(
            vec![rows, len],
            data,
            self.requires_grad(),
            Op::SliceCols { x: self.clone(), start },
        ))
    }

    /// Stack rank-2 tensors with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat_rows",
                shape: vec![],
                reason: "no tensors to concatenate".into(),
            });
        }
        let cols = parts[0].cols();
        let mut rows = 0;
        for p in parts {
            if p.shape().len() != 2 || p.cols() != cols {
                return Err(mismatch("concat_rows", &parts[0], p));
            }
            rows += p.shape()[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let requires = parts.iter().any(|p| p.requires_grad());
        Ok(result_of(
            vec![rows, cols],
            data,
            requires,
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    /// Place rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat_cols",
                shape: vec![],
                reason: "no tensors to concatenate".into(),
            });
        }
        let rows = parts[0].rows();
        let mut cols = 0;
        for p in parts {
            if p.shape().len() != 2 || p.rows() != rows {
                return Err(mismatch("concat_cols", &parts[0], p));
            }
            cols += p.shape()[1];
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = p.data();
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(&src[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let requires = parts.iter().any(|p| p.requires_grad());
        Ok(result_of(
            vec![rows, cols],
            data,
            requires,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor, TensorError> {
        let cols = self.cols();
        if cols == 0 {
            return Err(TensorError::InvalidShape {
                op: "softmax",
                shape: self.shape().to_vec(),
                reason: "empty last axis".into(),
            });
        }
        let rows = self.numel() / cols;
        let data = softmax_rows(&self.data(), rows, cols);
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            Op::Softmax(self.clone()),
        ))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, TensorError> {
        let d = self.cols();
        if gain.shape() != [d] {
            return Err(mismatch("layer_norm(gain)", self, gain));
        }
        if bias.shape() != [d] {
            return Err(mismatch("layer_norm(bias)", self, bias));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let g = gain.data();
        let b = bias.data();
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                data[r * d + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
        }
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad() || gain.requires_grad() || bias.requires_grad(),
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                eps,
            },
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = self.data().iter().map(|&v| gelu_scalar(v)).collect();
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            Op::Gelu(self.clone()),
        ))
    }

    /// Row lookup: `self` is a `[vocab, d]` table, output is `[ids.len(), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape: self.shape().to_vec(),
                reason: "table rank must be 2".into(),
            });
        }
        if ids.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape: self.shape().to_vec(),
                reason: "empty id list".into(),
            });
        }
        let (vocab, d) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfBounds {
                    op: "embedding",
                    index: id,
                    size: vocab,
                });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(result_of(
            vec![ids.len(), d],
            data,
            self.requires_grad(),
            Op::Embedding {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean cross-entropy of `[n, vocab]` logits against integer targets.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: self.shape().to_vec(),
                reason: "logits rank must be 2".into(),
            });
        }
        let (n, vocab) = (self.shape()[0], self.shape()[1]);
        if targets.len() != n {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: self.shape().to_vec(),
                reason: format!("{} targets for {} rows", targets.len(), n),
            });
        }
        let x = self.data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(TensorError::IndexOutOfBounds {
                    op: "cross_entropy",
                    index: t,
                    size: vocab,
                });
            }
            let row = &x[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total -= row[t] - logsum;
        }
        let loss = total / n as f64;
        Ok(result_of(
            vec![1],
            vec![loss],
            self.requires_grad(),
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean squared error against a same-shape target.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != target.shape() {
            return Err(mismatch("mse", self, target));
        }
        let n = self.numel() as f64;
        let loss = self
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(result_of(
            vec![1],
            vec![loss],
            self.requires_grad() || target.requires_grad(),
            Op::Mse {
                pred: self.clone(),
                target: target.clone(),
            },
        ))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&self, s: f64) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = self.data().iter().map(|v| v * s).collect();
        Ok(result_of(
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            Op::Scale(self.clone(), s),
        ))
    }

    /// Broadcast a rank-1 bias across the rows of a rank-2 tensor. This is the
    /// only broadcasting the engine supports.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || bias.shape() != [self.shape()[1]] {
            return Err(mismatch("add_bias", self, bias));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        let b = bias.data();
        let mut data = self.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += b[c];
            }
        }
        Ok(result_of(
            vec![rows, cols],
            data,
            self.requires_grad() || bias.requires_grad(),
            Op::AddBias {
                x: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Reverse-mode backward from a scalar loss. Gradients of reachable
    /// leaves with `requires_grad` are accumulated into their grad buffers.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(()); // nothing reachable
        }

        // Iterative post-order topological sort over grad-requiring nodes.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                topo.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in t.node.op.inputs() {
                if input.requires_grad() && !visited.contains(&input.key()) {
                    stack.push((input.clone(), false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in topo.iter().rev() {
            let g = match grads.get(&t.key()) {
                Some(g) => g.clone(),
                None => continue,
            };
            propagate(t, &g, &mut grads);
        }

        // Flush accumulated gradients into leaf buffers in deterministic
        // (topological) order.
        for t in topo.iter() {
            if matches!(t.node.op, Op::Leaf) && t.requires_grad() {
                if let Some(g) = grads.get(&t.key()) {
                    let mut buf = t.node.grad.borrow_mut();
                    match buf.as_mut() {
                        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
                        None => *buf = Some(g.clone()),
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut HashMap<usize, Vec<f64>>, t: &Tensor, update: &[f64]) {
    if !t.requires_grad() {
        return;
    }
    let entry = grads
        .entry(t.key())
        .or_insert_with(|| vec![0.0; t.numel()]);
    entry.iter_mut().zip(update).for_each(|(a, v)| *a += v);
}

fn propagate(t: &Tensor, g: &[f64], grads: &mut HashMap<usize, Vec<f64>>) {
    match &t.node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, a, g);
            accumulate(grads, b, g);
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let da: Vec<f64> = g.iter().zip(b.data().iter()).map(|(g, b)| g * b).collect();
                accumulate(grads, a, &da);
            }
            if b.requires_grad() {
                let db: Vec<f64> = g.iter().zip(a.data().iter()).map(|(g, a)| g * a).collect();
                accumulate(grads, b, &db);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                // dA = g @ B^T
                let bt = transpose_data(&b.data(), k, n);
                let mut da = vec![0.0; m * k];
                matmul_into(&mut da, g, &bt, m, n, k);
                accumulate(grads, a, &da);
            }
            if b.requires_grad() {
                // dB = A^T @ g
                let at = transpose_data(&a.data(), m, k);
                let mut db = vec![0.0; k * n];
                matmul_into(&mut db, &at, g, k, m, n);
                accumulate(grads, b, &db);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let dx = transpose_data(g, r, c);
            accumulate(grads, x, &dx);
        }
        Op::Reshape(x) => accumulate(grads, x, g),
        Op::SliceRows { x, start } => {
            let cols = x.shape()[1];
            let mut dx = vec![0.0; x.numel()];
            dx[start * cols..start * cols + g.len()].copy_from_slice(g);
            accumulate(grads, x, &dx);
        }
        Op::SliceCols { x, start } => {
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let len = t.shape()[1];
            let mut dx = vec![0.0; rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + len]
                    .copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            accumulate(grads, x, &dx);
        }
        Op::ConcatRows(parts) => {
            let cols = t.shape()[1];
            let mut row = 0;
            for p in parts {
                let pr = p.shape()[0];
                accumulate(grads, p, &g[row * cols..(row + pr) * cols]);
                row += pr;
            }
        }
        Op::ConcatCols(parts) => {
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut offset = 0;
            for p in parts {
                let pc = p.shape()[1];
                if p.requires_grad() {
                    let mut dp = vec![0.0; rows * pc];
                    for r in 0..rows {
                        dp[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                    }
                    accumulate(grads, p, &dp);
                }
                offset += pc;
            }
        }
        Op::Softmax(x) => {
            let cols = t.cols();
            let rows = t.numel() / cols;
            let s = t.data();
            let mut dx = vec![0.0; rows * cols];
            for r in 0..rows {
                let srow = &s[r * cols..(r + 1) * cols];
                let grow = &g[r * cols..(r + 1) * cols];
                let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                for c in 0..cols {
                    dx[r * cols + c] = srow[c] * (grow[c] - dot);
                }
            }
            accumulate(grads, x, &dx);
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let d = x.cols();
            let rows = x.numel() / d;
            let xs = x.data();
            let gs = gain.data();
            let mut dx = vec![0.0; rows * d];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for r in 0..rows {
                let row = &xs[r * d..(r + 1) * d];
                let grow = &g[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                let mut xhat = vec![0.0; d];
                let mut tvec = vec![0.0; d];
                for c in 0..d {
                    xhat[c] = (row[c] - mean) * rstd;
                    tvec[c] = grow[c] * gs[c];
                    m1 += tvec[c];
                    m2 += tvec[c] * xhat[c];
                    dgain[c] += grow[c] * xhat[c];
                    dbias[c] += grow[c];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for c in 0..d {
                    dx[r * d + c] = rstd * (tvec[c] - m1 - xhat[c] * m2);
                }
            }
            accumulate(grads, x, &dx);
            accumulate(grads, gain, &dgain);
            accumulate(grads, bias, &dbias);
        }
        Op::Gelu(x) => {
            let dx: Vec<f64> = x
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| gv * gelu_grad_scalar(v))
                .collect();
            accumulate(grads, x, &dx);
        }
        Op::Embedding { table, ids } => {
            let d = table.shape()[1];
            let mut dt = vec![0.0; table.numel()];
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..d {
                    dt[id * d + c] += g[r * d + c];
                }
            }
            accumulate(grads, table, &dt);
        }
        Op::CrossEntropy { logits, targets } => {
            let (n, vocab) = (logits.shape()[0], logits.shape()[1]);
            let probs = softmax_rows(&logits.data(), n, vocab);
            let scale = g[0] / n as f64;
            let mut dl = probs;
            for (r, &t_id) in targets.iter().enumerate() {
                dl[r * vocab + t_id] -= 1.0;
            }
            dl.iter_mut().for_each(|v| *v *= scale);
            accumulate(grads, logits, &dl);
        }
        Op::Mse { pred, target } => {
            let n = pred.numel() as f64;
            let scale = g[0] * 2.0 / n;
            if pred.requires_grad() {
                let dp: Vec<f64> = pred
                    .data()
                    .iter()
                    .zip(target.data().iter())
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                accumulate(grads, pred, &dp);
            }
            if target.requires_grad() {
                let dt: Vec<f64> = pred
                    .data()
                    .iter()
                    .zip(target.data().iter())
                    .map(|(p, t)| -scale * (p - t))
                    .collect();
                accumulate(grads, target, &dt);
            }
        }
        Op::Scale(x, s) => {
            let dx: Vec<f64> = g.iter().map(|v| v * s).collect();
            accumulate(grads, x, &dx);
        }
        Op::AddBias { x, bias } => {
            accumulate(grads, x, g);
            if bias.requires_grad() {
                let (rows, cols) = (x.shape()[0], x.shape()[1]);
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += g[r * cols + c];
                    }
                }
                accumulate(grads, bias, &db);
            }
        }
    }
}
