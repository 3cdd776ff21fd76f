//! Reverse-mode differentiation over rank-2 arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar with respect to every node. Tapes are built fresh for each step
//! and dropped afterwards.

use super::array::matmul_into;
use super::{DenseArray, ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, DenseArray),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Sigmoid(Var),
    Softplus(Var),
    Gelu(Var),
    Sum(Var),
    MeanRows(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: DenseArray,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    RepeatRows(Var),
    Unfold {
        x: Var,
        kernel: usize,
        dilation: usize,
    },
}

struct Node {
    value: DenseArray,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<DenseArray>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&DenseArray> {
        self.grads[v.0].as_ref()
    }
}

const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let a = &self.nodes[v.0].value;
        (a.rows(), a.cols())
    }

    /// Constant input; gradients are still reported for it.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        let value = value.as_matrix();
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).as_matrix();
        self.push(value, Op::Param(id))
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", f64::max, Op::Maximum(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    /// `[m×n] + [1×n]`, the row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err!("add_row: {m}x{n} with {:?}", self.dims(row)));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, &v) in out.row_mut(i).iter_mut().zip(&r) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `[m×n] ⊙ [1×n]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err!("mul_row: {m}x{n} with {:?}", self.dims(row)));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, &v) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= v;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// `[m×n] ⊙ [m×1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(col) != (m, 1) {
            return Err(shape_err!("mul_col: {m}x{n} with {:?}", self.dims(col)));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, &k) in c.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|o| *o *= k);
        }
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, k: &DenseArray) -> Result<Var> {
        let (m, n) = self.dims(a);
        if k.len() != m * n {
            return Err(shape_err!("mul_const: {m}x{n} with {:?}", k.shape()));
        }
        let k = k.as_matrix();
        let out = self.value(a).zip_map(&k, |x, y| x * y)?;
        Ok(self.push(out, Op::MulConst(a, k)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = DenseArray::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over rows, `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mean_rows()?;
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Sum over columns, `[m×n] → [m×1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, _) = (v.rows(), v.cols());
        let data = (0..m).map(|i| v.row(i).iter().sum()).collect();
        let out = DenseArray::matrix(m, 1, data).expect("sum_cols shape");
        self.push(out, Op::SumCols(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Per-row layer normalisation with learned gain and bias (`1 × n` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gain) != (1, n) || self.dims(bias) != (1, n) {
            return Err(shape_err!("layer_norm gain/bias must be 1x{n}"));
        }
        let xv = self.value(x);
        let mut xhat = DenseArray::zeros(&[m, n]);
        let mut rstd = Vec::with_capacity(m);
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for (o, &v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * r;
            }
            rstd.push(r);
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = xhat.clone();
        for i in 0..m {
            for ((o, &gv), &bv) in out.row_mut(i).iter_mut().zip(&g).zip(&b) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| shape_err!("concat_cols of nothing"))?;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(shape_err!("concat_cols row mismatch"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = DenseArray::matrix(m, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&DenseArray> = parts.iter().map(|&p| self.value(p)).collect();
        let out = DenseArray::vstack(&vals)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(shape_err!("slice_cols {start}+{len} of {n}"));
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = DenseArray::matrix(m, len, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > m {
            return Err(shape_err!("slice_rows {start}+{len} of {m}"));
        }
        let v = self.value(a);
        let out = DenseArray::matrix(len, n, v.data()[start * n..(start + len) * n].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, _) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Index {
                index: bad,
                lo: 0,
                hi: m.saturating_sub(1),
            });
        }
        let out = self.value(a).select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    /// Broadcast a `1 × n` row to `m × n`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let (r, n) = self.dims(a);
        if r != 1 {
            return Err(shape_err!("repeat_rows needs a single row, got {r}"));
        }
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&row);
        }
        let out = DenseArray::matrix(m, n, data)?;
        Ok(self.push(out, Op::RepeatRows(a)))
    }

    /// Temporal unfolding for a same-padded 1-D convolution: row `i` of the
    /// output holds rows `i + (j - k/2)·dilation` for `j in 0..k`, zero
    /// outside the sequence. `[N×D] → [N×kD]`.
    pub fn unfold(&mut self, x: Var, kernel: usize, dilation: usize) -> Result<Var> {
        if kernel % 2 == 0 || dilation == 0 {
            return Err(shape_err!("unfold needs odd kernel and dilation ≥ 1"));
        }
        let (n, d) = self.dims(x);
        let half = (kernel / 2) as isize;
        let xv = self.value(x);
        let mut out = DenseArray::zeros(&[n, kernel * d]);
        for i in 0..n {
            for j in 0..kernel {
                let src = i as isize + (j as isize - half) * dilation as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src_row = xv.row(src as usize).to_vec();
                out.row_mut(i)[j * d..(j + 1) * d].copy_from_slice(&src_row);
            }
        }
        Ok(self.push(
            out,
            Op::Unfold {
                x,
                kernel,
                dilation,
            },
        ))
    }

    /// Gradient of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err!("backward needs a scalar, got {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseArray::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, g: &DenseArray, grads: &mut [Option<DenseArray>]) -> Result<()> {
        let acc = |grads: &mut [Option<DenseArray>], v: Var, delta: DenseArray| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = G · Bᵀ
                let da = g.matmul_t(bv)?;
                // dB = Aᵀ · G
                let at = av.transpose();
                let mut db = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut db, k, m, n);
                acc(grads, *a, da);
                acc(grads, *b, DenseArray::matrix(k, n, db)?);
            }
            Op::MatMulT(a, b) => {
                // out = A Bᵀ ; dA = G B ; dB = Gᵀ A
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = g.matmul(bv)?;
                let db = g.transpose().matmul(av)?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(grads, *a, g.zip_map(bv, |x, y| x * y)?);
                acc(grads, *b, g.zip_map(av, |x, y| x * y)?);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(grads, *a, g.zip_map(bv, |x, y| x / y)?);
                let t = g.zip_map(out, |x, o| x * o)?;
                acc(grads, *b, t.zip_map(bv, |x, y| -x / y)?);
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let av = self.value(*a);
                // ties route the gradient to the first operand
                let mut ga = g.clone();
                let mut gb = g.clone();
                for i in 0..g.len() {
                    let from_a = av.data()[i] == out.data()[i];
                    if from_a {
                        gb.data_mut()[i] = 0.0;
                    } else {
                        ga.data_mut()[i] = 0.0;
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                acc(grads, *row, g.mean_rows()?.scale(g.rows() as f64));
            }
            Op::MulRow(a, row) => {
                let av = self.value(*a);
                let rv = self.value(*row);
                let (m, n) = (g.rows(), g.cols());
                let mut da = g.clone();
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        da.data_mut()[i * n + j] *= rv.data()[j];
                        dr[j] += g.data()[i * n + j] * av.data()[i * n + j];
                    }
                }
                acc(grads, *a, da);
                acc(grads, *row, DenseArray::row_vector(dr));
            }
            Op::MulCol(a, col) => {
                let av = self.value(*a);
                let cv = self.value(*col);
                let (m, n) = (g.rows(), g.cols());
                let mut da = g.clone();
                let mut dc = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        da.data_mut()[i * n + j] *= cv.data()[i];
                        dc[i] += g.data()[i * n + j] * av.data()[i * n + j];
                    }
                }
                acc(grads, *a, da);
                acc(grads, *col, DenseArray::matrix(m, 1, dc)?);
            }
            Op::Scale(a, k) => acc(grads, *a, g.scale(*k)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::MulConst(a, k) => acc(grads, *a, g.zip_map(k, |x, y| x * y)?),
            Op::Exp(a) => acc(grads, *a, g.zip_map(out, |x, o| x * o)?),
            Op::Ln(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, v| x / v)?),
            Op::Sqrt(a) => acc(grads, *a, g.zip_map(out, |x, o| 0.5 * x / o)?),
            Op::Square(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, v| 2.0 * x * v)?),
            Op::Sigmoid(a) => acc(grads, *a, g.zip_map(out, |x, o| x * o * (1.0 - o))?),
            Op::Softplus(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, v| x * sigmoid(v))?),
            Op::Gelu(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, v| x * gelu_grad(v))?),
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(grads, *a, DenseArray::filled(&[av.rows(), av.cols()], g.data()[0]));
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let m = av.rows();
                let mut d = DenseArray::zeros(&[m, av.cols()]);
                let inv = 1.0 / m as f64;
                for i in 0..m {
                    for (o, &gv) in d.row_mut(i).iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                acc(grads, *a, d);
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = DenseArray::zeros(&[m, n]);
                for i in 0..m {
                    let gi = g.data()[i];
                    d.row_mut(i).iter_mut().for_each(|o| *o = gi);
                }
                acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = DenseArray::zeros(&[m, n]);
                for i in 0..m {
                    let y = out.row(i);
                    let gi = g.row(i);
                    let s: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y[j] * (gi[j] - s);
                    }
                }
                acc(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = DenseArray::zeros(&[m, n]);
                for i in 0..m {
                    let gi = g.row(i);
                    let s: f64 = gi.iter().sum();
                    let mut p = out.row(i).to_vec();
                    p.iter_mut().for_each(|v| *v = v.exp());
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = gi[j] - p[j] * s;
                    }
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = (xhat.rows(), xhat.cols());
                let gv = self.value(*gain).data();
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut dx = DenseArray::zeros(&[m, n]);
                for i in 0..m {
                    let gi = g.row(i);
                    let xh = xhat.row(i);
                    let mut dxhat = vec![0.0; n];
                    for j in 0..n {
                        dgain[j] += gi[j] * xh[j];
                        dbias[j] += gi[j];
                        dxhat[j] = gi[j] * gv[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let k = rstd[i] / n as f64;
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = k * (n as f64 * dxhat[j] - s1 - xh[j] * s2);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, DenseArray::row_vector(dgain));
                acc(grads, *bias, DenseArray::row_vector(dbias));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(m * w);
                    for i in 0..m {
                        d.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    acc(grads, p, DenseArray::matrix(m, w, d)?);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let d = g.data()[offset * n..(offset + r) * n].to_vec();
                    acc(grads, p, DenseArray::matrix(r, n, d)?);
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let w = g.cols();
                let mut d = DenseArray::zeros(&[m, n]);
                for i in 0..m {
                    d.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                acc(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = DenseArray::zeros(&[m, n]);
                d.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                acc(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut d = DenseArray::zeros(&[m, n]);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &gv) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                acc(grads, *a, d);
            }
            Op::RepeatRows(a) => {
                let s = g.mean_rows()?.scale(g.rows() as f64);
                acc(grads, *a, s);
            }
            Op::Unfold {
                x,
                kernel,
                dilation,
            } => {
                let xv = self.value(*x);
                let (n, d) = (xv.rows(), xv.cols());
                let half = (*kernel / 2) as isize;
                let mut dx = DenseArray::zeros(&[n, d]);
                for i in 0..n {
                    for j in 0..*kernel {
                        let src = i as isize + (j as isize - half) * *dilation as isize;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        let gslice = &g.row(i)[j * d..(j + 1) * d];
                        for (o, &gv) in dx.row_mut(src as usize).iter_mut().zip(gslice) {
                            *o += gv;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
        }
        Ok(())
    }

    /// Add the gradients of every parameter leaf into the store.
    pub fn accumulate(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                let p = store.get_mut(*id);
                p.grad.add_assign_scaled(g, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradient_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(DenseArray::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = t.constant(DenseArray::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.scalar(c), 11.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.constant(DenseArray::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.constant(DenseArray::zeros(&[2, 2]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn unfold_pads_with_zeros() {
        let mut t = Tape::new();
        let x = t.constant(DenseArray::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let u = t.unfold(x, 3, 1).unwrap();
        assert_eq!(
            t.value(u).data(),
            &[0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]
        );
        let u2 = t.unfold(x, 3, 2).unwrap();
        assert_eq!(t.value(u2).data(), &[0.0, 1.0, 3.0, 0.0, 2.0, 0.0, 1.0, 3.0, 0.0]);
    }
}
