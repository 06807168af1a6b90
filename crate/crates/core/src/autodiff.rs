//! Tape-based reverse-mode differentiation over 2-D [`Tensor`] values.
//!
//! A [`Tape`] records every primitive in construction order; the record is
//! acyclic by construction and [`Tape::backward`] walks it in reverse,
//! accumulating gradients. Parameters enter a tape as leaves and their
//! gradients are read back through [`Gradients`].

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    RowSoftmax(usize),
    LayerNormRows(usize),
    Gelu(usize),
    MeanRowsMasked(usize, Vec<f64>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize, usize),
    LookupRows(usize, Vec<usize>),
    RowL2Normalize(usize),
    TakeDiag(usize),
    RowLogSumExp(usize),
    Sum(usize),
    Mean(usize),
    MulRowBroadcast(usize, usize),
    AddRowBroadcast(usize, usize),
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).finish()
    }
}


/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn grad(&self, v: Var<'_>) -> &[f64] {
        &self.grads[v.idx]
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Records a copy of `tensor` as a differentiable leaf.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push(tensor.clone(), Op::Leaf)
    }

    /// Records a constant; gradients still flow to it but are discarded by
    /// callers that never read them.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        self.push(tensor, Op::Leaf)
    }

    fn with_value<T>(&self, idx: usize, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[idx].value)
    }

    /// Concatenates equal-height matrices side by side.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].idx].value.rows();
        let mut cols = 0;
        for p in parts {
            let v = &nodes[p.idx].value;
            if v.rows() != rows {
                return Err(shape_err("concat_cols", nodes[parts[0].idx].value.shape(), v.shape()));
            }
            cols += v.cols();
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for p in parts {
            let v = &nodes[p.idx].value;
            let c = v.cols();
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + c]
                    .copy_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let idxs = parts.iter().map(|p| p.idx).collect();
        drop(nodes);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(idxs)))
    }

    /// Stacks equal-width matrices on top of each other.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows of zero tensors"));
        }
        let nodes = self.nodes.borrow();
        let cols = nodes[parts[0].idx].value.cols();
        let mut rows = 0;
        for p in parts {
            let v = &nodes[p.idx].value;
            if v.cols() != cols {
                return Err(shape_err("concat_rows", nodes[parts[0].idx].value.shape(), v.shape()));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(nodes[p.idx].value.data());
        }
        let idxs = parts.iter().map(|p| p.idx).collect();
        drop(nodes);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(idxs)))
    }

    /// Gathers rows of `table` by index; gradients scatter-add back.
    pub fn lookup_rows<'t>(&'t self, table: Var<'t>, ids: &[usize]) -> Result<Var<'t>> {
        let (rows, cols, data) = self.with_value(table.idx, |t| {
            let cols = t.cols();
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &id in ids {
                if id >= t.rows() {
                    return Err(Error::invalid(format!(
                        "lookup_rows: id {id} out of range for table with {} rows",
                        t.rows()
                    )));
                }
                data.extend_from_slice(&t.data()[id * cols..(id + 1) * cols]);
            }
            Ok((ids.len(), cols, data))
        })?;
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::LookupRows(table.idx, ids.to_vec()),
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Returns a gradient per node;
    /// callers read leaves through [`Gradients::grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.idx].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.idx][0] = 1.0;

        for idx in (0..=loss.idx).rev() {
            let node = &nodes[idx];
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let dy = std::mem::take(&mut grads[idx]);
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[*a], &dy, 1.0);
                    axpy(&mut grads[*b], &dy, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[*a], &dy, 1.0);
                    axpy(&mut grads[*b], &dy, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    for i in 0..dy.len() {
                        grads[*a][i] += dy[i] * bv[i];
                    }
                    for i in 0..dy.len() {
                        grads[*b][i] += dy[i] * av[i];
                    }
                }
                Op::Scale(a, c) => axpy(&mut grads[*a], &dy, *c),
                Op::Matmul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA += dC * B^T
                    for i in 0..m {
                        for j in 0..n {
                            let d = dy[i * n + j];
                            if d != 0.0 {
                                for l in 0..k {
                                    grads[*a][i * k + l] += d * bv.data()[l * n + j];
                                }
                            }
                        }
                    }
                    // dB += A^T * dC
                    for l in 0..k {
                        for i in 0..m {
                            let a_il = av.data()[i * k + l];
                            if a_il != 0.0 {
                                for j in 0..n {
                                    grads[*b][l * n + j] += a_il * dy[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (rows, cols) = (y.rows(), y.cols());
                    for r in 0..rows {
                        for c in 0..cols {
                            grads[*a][c * rows + r] += dy[r * cols + c];
                        }
                    }
                }
                Op::RowSoftmax(a) => {
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let dr = &dy[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(dr).map(|(yj, dj)| yj * dj).sum();
                        for j in 0..cols {
                            grads[*a][r * cols + j] += yr[j] * (dr[j] - dot);
                        }
                    }
                }
                Op::LayerNormRows(a) => {
                    let x = &nodes[*a].value;
                    let cols = x.cols();
                    for r in 0..x.rows() {
                        let xr = &x.data()[r * cols..(r + 1) * cols];
                        let dr = &dy[r * cols..(r + 1) * cols];
                        let mean = xr.iter().sum::<f64>() / cols as f64;
                        let var =
                            xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                        let sigma = (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) / sigma).collect();
                        let mean_d = dr.iter().sum::<f64>() / cols as f64;
                        let mean_dx =
                            dr.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / cols as f64;
                        for j in 0..cols {
                            grads[*a][r * cols + j] +=
                                (dr[j] - mean_d - xhat[j] * mean_dx) / sigma;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let x = nodes[*a].value.data();
                    for i in 0..dy.len() {
                        grads[*a][i] += dy[i] * gelu_prime(x[i]);
                    }
                }
                Op::MeanRowsMasked(a, mask) => {
                    let cols = y.cols();
                    let m: f64 = mask.iter().sum();
                    for (r, &w) in mask.iter().enumerate() {
                        if w != 0.0 {
                            for j in 0..cols {
                                grads[*a][r * cols + j] += w * dy[j] / m;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let cols = y.cols();
                    let rows = y.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        for r in 0..rows {
                            for j in 0..c {
                                grads[p][r * c + j] += dy[r * cols + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        axpy(&mut grads[p], &dy[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    let in_cols = nodes[*a].value.cols();
                    let out_cols = y.cols();
                    for r in 0..y.rows() {
                        for j in 0..out_cols {
                            grads[*a][r * in_cols + start + j] += dy[r * out_cols + j];
                        }
                    }
                }
                Op::LookupRows(table, ids) => {
                    let cols = y.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            grads[*table][id * cols + j] += dy[r * cols + j];
                        }
                    }
                }
                Op::RowL2Normalize(a) => {
                    let x = &nodes[*a].value;
                    let cols = x.cols();
                    for r in 0..x.rows() {
                        let xr = &x.data()[r * cols..(r + 1) * cols];
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let dr = &dy[r * cols..(r + 1) * cols];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = yr.iter().zip(dr).map(|(yj, dj)| yj * dj).sum();
                        for j in 0..cols {
                            grads[*a][r * cols + j] += (dr[j] - yr[j] * dot) / norm;
                        }
                    }
                }
                Op::TakeDiag(a) => {
                    let n = nodes[*a].value.rows();
                    for i in 0..n {
                        grads[*a][i * n + i] += dy[i];
                    }
                }
                Op::RowLogSumExp(a) => {
                    let x = &nodes[*a].value;
                    let cols = x.cols();
                    for r in 0..x.rows() {
                        let out = y.data()[r];
                        let d = dy[r];
                        if d != 0.0 {
                            for j in 0..cols {
                                grads[*a][r * cols + j] +=
                                    d * (x.data()[r * cols + j] - out).exp();
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    for g in grads[*a].iter_mut() {
                        *g += dy[0];
                    }
                }
                Op::Mean(a) => {
                    let n = grads[*a].len() as f64;
                    for g in grads[*a].iter_mut() {
                        *g += dy[0] / n;
                    }
                }
                Op::MulRowBroadcast(a, v) => {
                    let x = &nodes[*a].value;
                    let row = nodes[*v].value.data();
                    let cols = x.cols();
                    for r in 0..x.rows() {
                        for j in 0..cols {
                            grads[*a][r * cols + j] += dy[r * cols + j] * row[j];
                        }
                    }
                    for r in 0..x.rows() {
                        for j in 0..cols {
                            grads[*v][j] += dy[r * cols + j] * x.data()[r * cols + j];
                        }
                    }
                }
                Op::AddRowBroadcast(a, v) => {
                    let cols = y.cols();
                    axpy(&mut grads[*a], &dy, 1.0);
                    for r in 0..y.rows() {
                        for j in 0..cols {
                            grads[*v][j] += dy[r * cols + j];
                        }
                    }
                }
            }
            grads[idx] = dy;
        }
        Ok(Gradients { grads })
    }
}

fn axpy(acc: &mut [f64], src: &[f64], scale: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += scale * s;
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

// tanh form of gelu, as used by BERT-family models.
fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.idx, Clone::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.idx, |v| v.shape().to_vec())
    }

    pub fn scalar(&self) -> Result<f64> {
        self.tape.with_value(self.idx, |v| {
            if v.len() == 1 {
                Ok(v.data()[0])
            } else {
                Err(Error::invalid(format!(
                    "expected scalar, got shape {:?}",
                    v.shape()
                )))
            }
        })
    }

    fn zip_same_shape(
        self,
        other: Var<'t>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize, usize)> {
        let tape = self.tape;
        let nodes = tape.nodes.borrow();
        let a = &nodes[self.idx].value;
        let b = &nodes[other.idx].value;
        if a.shape() != b.shape() {
            return Err(shape_err(op_name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(a.shape().to_vec(), data)?;
        Ok((t, self.idx, other.idx))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, a, b) = self.zip_same_shape(other, "add", |x, y| x + y)?;
        Ok(self.tape.push(t, Op::Add(a, b)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, a, b) = self.zip_same_shape(other, "sub", |x, y| x - y)?;
        Ok(self.tape.push(t, Op::Sub(a, b)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, a, b) = self.zip_same_shape(other, "mul", |x, y| x * y)?;
        Ok(self.tape.push(t, Op::Mul(a, b)))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| c * x).collect())
        })?;
        Ok(self.tape.push(t, Op::Scale(self.idx, c)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[other.idx].value;
            if a.cols() != b.rows() {
                return Err(shape_err("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for l in 0..k {
                    let a_il = a.data()[i * k + l];
                    if a_il != 0.0 {
                        let brow = &b.data()[l * n..(l + 1) * n];
                        let crow = &mut data[i * n..(i + 1) * n];
                        for (cv, bv) in crow.iter_mut().zip(brow) {
                            *cv += a_il * bv;
                        }
                    }
                }
            }
            Tensor::matrix(m, n, data)?
        };
        Ok(tape.push(out, Op::Matmul(self.idx, other.idx)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let (rows, cols) = (v.rows(), v.cols());
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    data[c * rows + r] = v.data()[r * cols + c];
                }
            }
            Tensor::matrix(cols, rows, data)
        })?;
        Ok(self.tape.push(t, Op::Transpose(self.idx)))
    }

    /// Softmax applied independently to each row, with max-shift for
    /// stability. Rows of the output are non-negative and sum to 1.
    pub fn row_softmax(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let cols = v.cols();
            let mut data = vec![0.0; v.len()];
            for r in 0..v.rows() {
                let row = &v.data()[r * cols..(r + 1) * cols];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - max).exp();
                    data[r * cols + j] = e;
                    sum += e;
                }
                for j in 0..cols {
                    data[r * cols + j] /= sum;
                }
            }
            Tensor::matrix(v.rows(), cols, data)
        })?;
        Ok(self.tape.push(t, Op::RowSoftmax(self.idx)))
    }

    /// Normalizes each row to zero mean and unit variance (epsilon-guarded).
    pub fn layer_norm_rows(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let cols = v.cols();
            let mut data = vec![0.0; v.len()];
            for r in 0..v.rows() {
                let row = &v.data()[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
                let sigma = (var + LAYER_NORM_EPS).sqrt();
                for j in 0..cols {
                    data[r * cols + j] = (row[j] - mean) / sigma;
                }
            }
            Tensor::matrix(v.rows(), cols, data)
        })?;
        Ok(self.tape.push(t, Op::LayerNormRows(self.idx)))
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            Tensor::new(
                v.shape().to_vec(),
                v.data().iter().map(|&x| gelu_value(x)).collect(),
            )
        })?;
        Ok(self.tape.push(t, Op::Gelu(self.idx)))
    }

    /// Mean over rows where `mask` is nonzero; returns a `1 x cols` row.
    pub fn mean_rows_masked(self, mask: &[f64]) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            if mask.len() != v.rows() {
                return Err(shape_err("mean_rows_masked", v.shape(), &[mask.len()]));
            }
            let m: f64 = mask.iter().sum();
            if m == 0.0 {
                return Err(Error::invalid("mean_rows_masked: all-zero mask"));
            }
            let cols = v.cols();
            let mut data = vec![0.0; cols];
            for (r, &w) in mask.iter().enumerate() {
                if w != 0.0 {
                    for j in 0..cols {
                        data[j] += w * v.data()[r * cols + j];
                    }
                }
            }
            for d in data.iter_mut() {
                *d /= m;
            }
            Tensor::matrix(1, cols, data)
        })?;
        Ok(self
            .tape
            .push(t, Op::MeanRowsMasked(self.idx, mask.to_vec())))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            if start >= end || end > v.cols() {
                return Err(Error::invalid(format!(
                    "slice_cols {start}..{end} out of range for {} columns",
                    v.cols()
                )));
            }
            let cols = v.cols();
            let width = end - start;
            let mut data = Vec::with_capacity(v.rows() * width);
            for r in 0..v.rows() {
                data.extend_from_slice(&v.data()[r * cols + start..r * cols + end]);
            }
            Tensor::matrix(v.rows(), width, data)
        })?;
        Ok(self.tape.push(t, Op::SliceCols(self.idx, start, end)))
    }

    /// Scales each row to unit Euclidean norm; zero-norm rows are an error.
    pub fn row_l2_normalize(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let cols = v.cols();
            let mut data = vec![0.0; v.len()];
            for r in 0..v.rows() {
                let row = &v.data()[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::numeric(format!(
                        "zero-norm row {r} in row_l2_normalize"
                    )));
                }
                for j in 0..cols {
                    data[r * cols + j] = row[j] / norm;
                }
            }
            Tensor::matrix(v.rows(), cols, data)
        })?;
        Ok(self.tape.push(t, Op::RowL2Normalize(self.idx)))
    }

    /// Main diagonal of a square matrix as a `n x 1` column.
    pub fn take_diag(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let n = v.rows();
            if v.cols() != n {
                return Err(shape_err("take_diag", v.shape(), v.shape()));
            }
            let data = (0..n).map(|i| v.data()[i * n + i]).collect();
            Tensor::matrix(n, 1, data)
        })?;
        Ok(self.tape.push(t, Op::TakeDiag(self.idx)))
    }

    /// `log(sum(exp(row)))` per row, max-shifted; returns `rows x 1`.
    pub fn row_log_sum_exp(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            let cols = v.cols();
            let data = (0..v.rows())
                .map(|r| {
                    let row = &v.data()[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
                })
                .collect();
            Tensor::matrix(v.rows(), 1, data)
        })?;
        Ok(self.tape.push(t, Op::RowLogSumExp(self.idx)))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let t = self
            .tape
            .with_value(self.idx, |v| Tensor::scalar(v.data().iter().sum()));
        Ok(self.tape.push(t, Op::Sum(self.idx)))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let t = self.tape.with_value(self.idx, |v| {
            Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64)
        });
        Ok(self.tape.push(t, Op::Mean(self.idx)))
    }

    /// Elementwise product of every row with a `1 x cols` row vector.
    pub fn mul_row_broadcast(self, row: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let t = {
            let nodes = tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let v = &nodes[row.idx].value;
            if v.rows() != 1 || v.cols() != a.cols() {
                return Err(shape_err("mul_row_broadcast", a.shape(), v.shape()));
            }
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * v.data()[i % cols])
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(tape.push(t, Op::MulRowBroadcast(self.idx, row.idx)))
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(self, row: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let t = {
            let nodes = tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let v = &nodes[row.idx].value;
            if v.rows() != 1 || v.cols() != a.cols() {
                return Err(shape_err("add_row_broadcast", a.shape(), v.shape()));
            }
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + v.data()[i % cols])
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(tape.push(t, Op::AddRowBroadcast(self.idx, row.idx)))
    }
}

/// Compares analytic gradients of `loss_fn` against central finite
/// differences, returning the maximum relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &mut [Tensor], epsilon: f64) -> Result<f64>
where
    F: for<'t> FnMut(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid(format!(
            "epsilon must be in (0, 1e-2], got {epsilon}"
        )));
    }

    // Analytic pass.
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = loss_fn(&tape, &vars)?;
        let value = loss.scalar()?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite loss {value}")));
        }
        let grads = tape.backward(loss)?;
        vars.iter().map(|v| grads.grad(*v).to_vec()).collect()
    };

    let mut eval = |params: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let value = loss_fn(&tape, &vars)?.scalar()?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite loss {value}")));
        }
        Ok(value)
    };

    let mut max_rel = 0.0_f64;
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + epsilon;
            let plus = eval(params)?;
            params[p].data_mut()[i] = orig - epsilon;
            let minus = eval(params)?;
            params[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
