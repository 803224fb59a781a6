//! Reverse-mode differentiation on a linear tape.
//!
//! Each primitive op records its inputs and enough forward state to run an
//! explicit backward function. `Tape::backward` replays the tape in reverse
//! and accumulates gradients for every parameter leaf that was touched.
//! There is no general graph engine: the op set below is the whole language.
//!
//! A tape lives for one forward/backward pass and is dropped afterwards.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    MulElem { a: Var, b: Var },
    DivElem { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    /// out[i][j] = a[i][j] + v[0][j]
    AddRowBroadcast { a: Var, v: Var },
    /// out[i][j] = a[i][j] * v[i][0]
    MulColBroadcast { a: Var, v: Var },
    SoftmaxRows { a: Var },
    /// Row-wise normalization to mean 0 / variance 1, then affine gain+shift.
    LayerNorm { a: Var, gain: Var, shift: Var, eps: f64 },
    Sigmoid { a: Var },
    Softplus { a: Var },
    GeluTanh { a: Var },
    ConcatRows { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    SumAll { a: Var },
    MaxElem { a: Var, b: Var },
    MinElem { a: Var, b: Var },
    ClampMin { a: Var, c: f64 },
    Abs { a: Var },
}

struct Node {
    op: Op,
    value: DenseMatrix,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by `Var`.
pub struct Grads {
    g: Vec<Option<DenseMatrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if it never received one.
    pub fn wrt(&self, v: Var, rows: usize, cols: usize) -> DenseMatrix {
        match self.get(v) {
            Some(m) => m.clone(),
            None => DenseMatrix::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: DenseMatrix, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; backward never propagates into it.
    pub fn leaf(&mut self, m: DenseMatrix) -> Var {
        self.push(Op::Leaf, m, false)
    }

    /// Trainable parameter leaf; receives a gradient after backward.
    pub fn param(&mut self, m: DenseMatrix) -> Var {
        self.push(Op::Leaf, m, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(DenseMatrix::filled(1, 1, v))
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul { a, b }, v, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let needs = self.ng(a);
        self.push(Op::Transpose { a }, v, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add { a, b }, v, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub { a, b }, v, needs))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MulElem { a, b }, v, needs))
    }

    pub fn div_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::DivElem { a, b }, v, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let needs = self.ng(a);
        self.push(Op::Scale { a, c }, v, needs)
    }

    /// Add a 1 x cols vector to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, v: Var) -> Result<Var> {
        let (am, vm) = (self.value(a), self.value(v));
        if vm.rows() != 1 || vm.cols() != am.cols() {
            return Err(Error::shape("add_row_broadcast", am.shape(), vm.shape()));
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(vm.row(0).iter()) {
                *o += b;
            }
        }
        let needs = self.ng(a) || self.ng(v);
        Ok(self.push(Op::AddRowBroadcast { a, v }, out, needs))
    }

    /// Multiply row i of `a` by the scalar `v[i][0]`.
    pub fn mul_col_broadcast(&mut self, a: Var, v: Var) -> Result<Var> {
        let (am, vm) = (self.value(a), self.value(v));
        if vm.cols() != 1 || vm.rows() != am.rows() {
            return Err(Error::shape("mul_col_broadcast", am.shape(), vm.shape()));
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            let s = vm.get(i, 0);
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        let needs = self.ng(a) || self.ng(v);
        Ok(self.push(Op::MulColBroadcast { a, v }, out, needs))
    }

    /// Numerically stable row-wise softmax. Rows sum to 1.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut out = am.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.ng(a);
        self.push(Op::SoftmaxRows { a }, out, needs)
    }

    /// Row-wise layer normalization with affine gain/shift (both 1 x cols).
    pub fn layer_norm(&mut self, a: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (am, gm, sm) = (self.value(a), self.value(gain), self.value(shift));
        if gm.rows() != 1 || gm.cols() != am.cols() {
            return Err(Error::shape("layer_norm gain", am.shape(), gm.shape()));
        }
        if sm.rows() != 1 || sm.cols() != am.cols() {
            return Err(Error::shape("layer_norm shift", am.shape(), sm.shape()));
        }
        let d = am.cols();
        let mut out = DenseMatrix::zeros(am.rows(), d);
        for i in 0..am.rows() {
            let row = am.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                out.set(i, j, gm.get(0, j) * xh + sm.get(0, j));
            }
        }
        let needs = self.ng(a) || self.ng(gain) || self.ng(shift);
        Ok(self.push(Op::LayerNorm { a, gain, shift, eps }, out, needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(stable_sigmoid);
        let needs = self.ng(a);
        self.push(Op::Sigmoid { a }, v, needs)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(stable_softplus);
        let needs = self.ng(a);
        self.push(Op::Softplus { a }, v, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu_tanh);
        let needs = self.ng(a);
        self.push(Op::GeluTanh { a }, v, needs)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(Error::shape("concat_rows", am.shape(), bm.shape()));
        }
        let mut data = Vec::with_capacity((am.rows() + bm.rows()) * am.cols());
        data.extend_from_slice(am.as_slice());
        data.extend_from_slice(bm.as_slice());
        let v = DenseMatrix::from_vec(am.rows() + bm.rows(), am.cols(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::ConcatRows { a, b }, v, needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(Error::shape("concat_cols", am.shape(), bm.shape()));
        }
        let cols = am.cols() + bm.cols();
        let mut out = DenseMatrix::zeros(am.rows(), cols);
        for i in 0..am.rows() {
            out.row_mut(i)[..am.cols()].copy_from_slice(am.row(i));
            out.row_mut(i)[am.cols()..].copy_from_slice(bm.row(i));
        }
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::ConcatCols { a, b }, out, needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.rows() {
            return Err(Error::Config(format!(
                "slice_rows {}..{} out of bounds for {} rows",
                start,
                start + len,
                am.rows()
            )));
        }
        let data = am.as_slice()[start * am.cols()..(start + len) * am.cols()].to_vec();
        let v = DenseMatrix::from_vec(len, am.cols(), data)?;
        let needs = self.ng(a);
        Ok(self.push(Op::SliceRows { a, start }, v, needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(Error::Config(format!(
                "slice_cols {}..{} out of bounds for {} cols",
                start,
                start + len,
                am.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(am.rows(), len);
        for i in 0..am.rows() {
            out.row_mut(i).copy_from_slice(&am.row(i)[start..start + len]);
        }
        let needs = self.ng(a);
        Ok(self.push(Op::SliceCols { a, start }, out, needs))
    }

    /// out row i = a row idx[i]. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let am = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= am.rows()) {
            return Err(Error::Config(format!(
                "gather_rows index {} out of bounds for {} rows",
                bad,
                am.rows()
            )));
        }
        let mut out = DenseMatrix::zeros(idx.len(), am.cols());
        for (i, &src) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(am.row(src));
        }
        let needs = self.ng(a);
        Ok(self.push(Op::GatherRows { a, idx }, out, needs))
    }

    /// Sum of all entries as a 1x1 matrix.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = DenseMatrix::filled(1, 1, self.value(a).sum());
        let needs = self.ng(a);
        self.push(Op::SumAll { a }, v, needs)
    }

    pub fn max_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), f64::max)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MaxElem { a, b }, v, needs))
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), f64::min)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MinElem { a, b }, v, needs))
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x.max(c));
        let needs = self.ng(a);
        self.push(Op::ClampMin { a, c }, v, needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let needs = self.ng(a);
        self.push(Op::Abs { a }, v, needs)
    }

    /// True if any softmax row on the tape fails to sum to 1 within `tol`.
    /// Test instrumentation for the attention invariant.
    pub fn worst_softmax_row_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in &self.nodes {
            if let Op::SoftmaxRows { .. } = n.op {
                for i in 0..n.value.rows() {
                    let s: f64 = n.value.row(i).iter().sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        worst
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from `loss` (must be 1x1). Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lm = self.value(loss);
        if lm.shape() != (1, 1) {
            return Err(Error::Config(format!(
                "backward requires a scalar loss, got {}x{}",
                lm.rows(),
                lm.cols()
            )));
        }
        if !lm.get(0, 0).is_finite() {
            return Err(Error::NonFinite { context: "loss".into() });
        }
        let mut g: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let grad_out = match g[id].take() {
                Some(go) => go,
                None => continue,
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    g[id] = Some(grad_out);
                    continue;
                }
                Op::MatMul { a, b } => {
                    if self.ng(*a) {
                        let da = grad_out.matmul_t(self.value(*b))?;
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let db = self.value(*a).t_matmul(&grad_out)?;
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::Transpose { a } => {
                    if self.ng(*a) {
                        accumulate(&mut g, *a, grad_out.transpose())?;
                    }
                }
                Op::Add { a, b } => {
                    if self.ng(*a) {
                        accumulate(&mut g, *a, grad_out.clone())?;
                    }
                    if self.ng(*b) {
                        accumulate(&mut g, *b, grad_out.clone())?;
                    }
                }
                Op::Sub { a, b } => {
                    if self.ng(*a) {
                        accumulate(&mut g, *a, grad_out.clone())?;
                    }
                    if self.ng(*b) {
                        accumulate(&mut g, *b, grad_out.scale(-1.0))?;
                    }
                }
                Op::MulElem { a, b } => {
                    if self.ng(*a) {
                        let da = grad_out.zip_map(self.value(*b), |go, bv| go * bv)?;
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let db = grad_out.zip_map(self.value(*a), |go, av| go * av)?;
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::DivElem { a, b } => {
                    let bv = self.value(*b);
                    if self.ng(*a) {
                        let da = grad_out.zip_map(bv, |go, b| go / b)?;
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let mut db = grad_out.zip_map(av, |go, a| go * a)?;
                        db = db.zip_map(bv, |x, b| -x / (b * b))?;
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::Scale { a, c } => {
                    if self.ng(*a) {
                        accumulate(&mut g, *a, grad_out.scale(*c))?;
                    }
                }
                Op::AddRowBroadcast { a, v } => {
                    if self.ng(*a) {
                        accumulate(&mut g, *a, grad_out.clone())?;
                    }
                    if self.ng(*v) {
                        let mut dv = DenseMatrix::zeros(1, grad_out.cols());
                        for i in 0..grad_out.rows() {
                            for (o, &x) in dv.row_mut(0).iter_mut().zip(grad_out.row(i)) {
                                *o += x;
                            }
                        }
                        accumulate(&mut g, *v, dv)?;
                    }
                }
                Op::MulColBroadcast { a, v } => {
                    let vm = self.value(*v);
                    if self.ng(*a) {
                        let mut da = grad_out.clone();
                        for i in 0..da.rows() {
                            let s = vm.get(i, 0);
                            for x in da.row_mut(i) {
                                *x *= s;
                            }
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*v) {
                        let am = self.value(*a);
                        let mut dv = DenseMatrix::zeros(am.rows(), 1);
                        for i in 0..am.rows() {
                            let mut acc = 0.0;
                            for (&go, &av) in grad_out.row(i).iter().zip(am.row(i)) {
                                acc += go * av;
                            }
                            dv.set(i, 0, acc);
                        }
                        accumulate(&mut g, *v, dv)?;
                    }
                }
                Op::SoftmaxRows { a } => {
                    if self.ng(*a) {
                        let y = &node.value;
                        let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                        for i in 0..y.rows() {
                            let mut dot = 0.0;
                            for (&go, &yv) in grad_out.row(i).iter().zip(y.row(i)) {
                                dot += go * yv;
                            }
                            for j in 0..y.cols() {
                                da.set(i, j, y.get(i, j) * (grad_out.get(i, j) - dot));
                            }
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::LayerNorm { a, gain, shift, eps } => {
                    let am = self.value(*a);
                    let gm = self.value(*gain);
                    let d = am.cols();
                    let mut da = DenseMatrix::zeros(am.rows(), d);
                    let mut dg = DenseMatrix::zeros(1, d);
                    let mut ds = DenseMatrix::zeros(1, d);
                    for i in 0..am.rows() {
                        let row = am.row(i);
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        // dxh = grad_out * gain; then the standard two-correction form.
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        let mut dxh = vec![0.0; d];
                        let mut xh = vec![0.0; d];
                        for j in 0..d {
                            xh[j] = (row[j] - mean) * inv;
                            dxh[j] = grad_out.get(i, j) * gm.get(0, j);
                            mean_dxh += dxh[j];
                            mean_dxh_xh += dxh[j] * xh[j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            da.set(i, j, inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh));
                            dg.set(0, j, dg.get(0, j) + grad_out.get(i, j) * xh[j]);
                            ds.set(0, j, ds.get(0, j) + grad_out.get(i, j));
                        }
                    }
                    if self.ng(*a) {
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*gain) {
                        accumulate(&mut g, *gain, dg)?;
                    }
                    if self.ng(*shift) {
                        accumulate(&mut g, *shift, ds)?;
                    }
                }
                Op::Sigmoid { a } => {
                    if self.ng(*a) {
                        let y = &node.value;
                        let da = grad_out.zip_map(y, |go, s| go * s * (1.0 - s))?;
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::Softplus { a } => {
                    if self.ng(*a) {
                        let da = grad_out.zip_map(self.value(*a), |go, x| go * stable_sigmoid(x))?;
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::GeluTanh { a } => {
                    if self.ng(*a) {
                        let da =
                            grad_out.zip_map(self.value(*a), |go, x| go * gelu_tanh_deriv(x))?;
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::ConcatRows { a, b } => {
                    let ar = self.value(*a).rows();
                    let cols = grad_out.cols();
                    if self.ng(*a) {
                        let da = DenseMatrix::from_vec(
                            ar,
                            cols,
                            grad_out.as_slice()[..ar * cols].to_vec(),
                        )?;
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let br = grad_out.rows() - ar;
                        let db = DenseMatrix::from_vec(
                            br,
                            cols,
                            grad_out.as_slice()[ar * cols..].to_vec(),
                        )?;
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ac = self.value(*a).cols();
                    if self.ng(*a) {
                        let mut da = DenseMatrix::zeros(grad_out.rows(), ac);
                        for i in 0..grad_out.rows() {
                            da.row_mut(i).copy_from_slice(&grad_out.row(i)[..ac]);
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let bc = grad_out.cols() - ac;
                        let mut db = DenseMatrix::zeros(grad_out.rows(), bc);
                        for i in 0..grad_out.rows() {
                            db.row_mut(i).copy_from_slice(&grad_out.row(i)[ac..]);
                        }
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::SliceRows { a, start } => {
                    if self.ng(*a) {
                        let am = self.value(*a);
                        let mut da = DenseMatrix::zeros(am.rows(), am.cols());
                        for i in 0..grad_out.rows() {
                            da.row_mut(start + i).copy_from_slice(grad_out.row(i));
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::SliceCols { a, start } => {
                    if self.ng(*a) {
                        let am = self.value(*a);
                        let mut da = DenseMatrix::zeros(am.rows(), am.cols());
                        for i in 0..grad_out.rows() {
                            da.row_mut(i)[*start..start + grad_out.cols()]
                                .copy_from_slice(grad_out.row(i));
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::GatherRows { a, idx } => {
                    if self.ng(*a) {
                        let am = self.value(*a);
                        let mut da = DenseMatrix::zeros(am.rows(), am.cols());
                        for (i, &src) in idx.iter().enumerate() {
                            for (o, &x) in da.row_mut(src).iter_mut().zip(grad_out.row(i)) {
                                *o += x;
                            }
                        }
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::SumAll { a } => {
                    if self.ng(*a) {
                        let am = self.value(*a);
                        let da = DenseMatrix::filled(am.rows(), am.cols(), grad_out.get(0, 0));
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::MaxElem { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut da = grad_out.clone();
                        mask_where(&mut da, av, bv, |x, y| x >= y);
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let mut db = grad_out.clone();
                        mask_where(&mut db, av, bv, |x, y| x < y);
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::MinElem { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut da = grad_out.clone();
                        mask_where(&mut da, av, bv, |x, y| x <= y);
                        accumulate(&mut g, *a, da)?;
                    }
                    if self.ng(*b) {
                        let mut db = grad_out.clone();
                        mask_where(&mut db, av, bv, |x, y| x > y);
                        accumulate(&mut g, *b, db)?;
                    }
                }
                Op::ClampMin { a, c } => {
                    if self.ng(*a) {
                        let da = grad_out.zip_map(self.value(*a), |go, x| {
                            if x > *c {
                                go
                            } else {
                                0.0
                            }
                        })?;
                        accumulate(&mut g, *a, da)?;
                    }
                }
                Op::Abs { a } => {
                    if self.ng(*a) {
                        let da = grad_out.zip_map(self.value(*a), |go, x| go * sign(x))?;
                        accumulate(&mut g, *a, da)?;
                    }
                }
            }
        }
        Ok(Grads { g })
    }
}

fn accumulate(g: &mut [Option<DenseMatrix>], v: Var, delta: DenseMatrix) -> Result<()> {
    match &mut g[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

fn mask_where(
    grad: &mut DenseMatrix,
    a: &DenseMatrix,
    b: &DenseMatrix,
    keep: impl Fn(f64, f64) -> bool,
) {
    for (i, go) in grad.as_mut_slice().iter_mut().enumerate() {
        if !keep(a.as_slice()[i], b.as_slice()[i]) {
            *go = 0.0;
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_tanh_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    }

    #[test]
    fn elementwise_derivatives_match_finite_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let eps = 1e-6;
            assert!(
                (fd_scalar(stable_sigmoid, x, eps)
                    - stable_sigmoid(x) * (1.0 - stable_sigmoid(x)))
                .abs()
                    < 1e-8
            );
            assert!((fd_scalar(stable_softplus, x, eps) - stable_sigmoid(x)).abs() < 1e-8);
            assert!((fd_scalar(gelu_tanh, x, eps) - gelu_tanh_deriv(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn matmul_backward_matches_manual() {
        // loss = sum(A.B); dA = ones . B^T, dB = A^T . ones
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = t.param(DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        let loss = t.sum_all(c);
        let g = t.backward(loss).unwrap();
        let da = g.get(a).unwrap();
        // ones(2x2) . B^T: row = [5+6, 7+8] = [11, 15]
        assert_eq!(da.row(0), &[11.0, 15.0]);
        assert_eq!(da.row(1), &[11.0, 15.0]);
        let db = g.get(b).unwrap();
        // A^T . ones: col sums of A broadcast: [1+3, 1+3; 2+4, 2+4]
        assert_eq!(db.row(0), &[4.0, 4.0]);
        assert_eq!(db.row(1), &[6.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let a = t.leaf(DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]).unwrap());
        let s = t.softmax_rows(a);
        for i in 0..2 {
            let sum: f64 = t.value(s).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(t.worst_softmax_row_defect() < 1e-12);
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(DenseMatrix::filled(2, 2, 3.0));
        let b = t.param(DenseMatrix::filled(2, 2, 2.0));
        let c = t.mul_elem(a, b).unwrap();
        let loss = t.sum_all(c);
        let g = t.backward(loss).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().as_slice(), &[3.0; 4]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::filled(2, 2, 1.0));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let gth = t.gather_rows(a, vec![0, 0, 1]).unwrap();
        let loss = t.sum_all(gth);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().as_slice(), &[2.0, 1.0]);
    }
}
