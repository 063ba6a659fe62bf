//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation appends one node to the [`Tape`]; because a node can only
//! reference values that already exist, the node list is always in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Relu(Var),
    Exp(Var),
    Sigmoid(Var),
    Sum(Var),
    SumRows(Var),
    Concat(Var, Var),
    L1NormRows(Var),
    L1Normalize(Var, f64),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    Bce(Var, Arc<[f64]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Neg(..) => "neg",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::Concat(..) => "concat",
            Op::L1NormRows(..) => "l1_norm_rows",
            Op::L1Normalize(..) => "l1_normalize",
            Op::Gather(..) => "gather",
            Op::SegmentSum(..) => "segment_sum",
            Op::Bce(..) => "bce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Param | Op::Constant => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b)
            | Op::Concat(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Neg(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::L1NormRows(a)
            | Op::L1Normalize(a, _) => vec![a],
            Op::Gather(a, _) | Op::SegmentSum(a, _) | Op::Bce(a, _) => vec![a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One recorded primitive, as exposed for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub output: Var,
    pub kind: &'static str,
    pub inputs: Vec<Var>,
}

/// Scores are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn records(&self) -> impl Iterator<Item = OpRecord> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| OpRecord {
            output: Var(i),
            kind: n.op.name(),
            inputs: n.op.inputs(),
        })
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Param => true,
            Op::Constant => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("shapes checked by caller")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `[1, m]` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, m) = self.value(a).require_matrix("add_row")?;
        let bshape = self.shape(bias);
        if bshape.len() != 2 || bshape[0] != 1 || bshape[1] != m {
            return Err(Error::dim("add_row", self.shape(a), bshape));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(m.max(1)) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Scales row `i` of `a` by `col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.value(a).require_matrix("mul_col")?;
        let cshape = self.shape(col);
        if cshape.len() != 2 || cshape[0] != n || cshape[1] != 1 {
            return Err(Error::dim("mul_col", self.shape(a), cshape));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        if m > 0 {
            for (row, &w) in out.data_mut().chunks_mut(m).zip(&c) {
                row.iter_mut().for_each(|v| *v *= w);
            }
        }
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Sum of all entries, as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row-wise sums, `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).require_matrix("sum_rows")?;
        let v = self.value(a);
        let data = (0..n).map(|i| v.data()[i * m..(i + 1) * m].iter().sum()).collect();
        Ok(self.push(Tensor::from_matrix(n, 1, data)?, Op::SumRows(a)))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ma) = self.value(a).require_matrix("concat")?;
        let (nb, mb) = self.value(b).require_matrix("concat")?;
        if n != nb {
            return Err(Error::dim("concat", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * (ma + mb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        Ok(self.push(Tensor::from_matrix(n, ma + mb, data)?, Op::Concat(a, b)))
    }

    /// Row-wise L1 norms, `[n, m] -> [n, 1]`.
    pub fn l1_norm_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).require_matrix("l1_norm_rows")?;
        let v = self.value(a);
        let data = (0..n)
            .map(|i| v.data()[i * m..(i + 1) * m].iter().map(|x| x.abs()).sum())
            .collect();
        Ok(self.push(Tensor::from_matrix(n, 1, data)?, Op::L1NormRows(a)))
    }

    /// Divides each row by `(|row|₁ + eps)`.
    pub fn l1_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (_, m) = self.value(a).require_matrix("l1_normalize")?;
        let mut out = self.value(a).clone();
        if m > 0 {
            for row in out.data_mut().chunks_mut(m) {
                let denom = row.iter().map(|x| x.abs()).sum::<f64>() + eps;
                row.iter_mut().for_each(|x| *x /= denom);
            }
        }
        Ok(self.push(out, Op::L1Normalize(a, eps)))
    }

    /// Selects rows of `a` by index; repeated indices are allowed.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let out = self.value(a).gather_rows(&index)?;
        Ok(self.push(out, Op::Gather(a, index)))
    }

    /// Scatter-add: output row `s` is the sum of input rows `i` with
    /// `segment[i] == s`, for `s < n_segments`.
    pub fn segment_sum(&mut self, a: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var> {
        let (n, m) = self.value(a).require_matrix("segment_sum")?;
        if segment.len() != n {
            return Err(Error::dim("segment_sum", self.shape(a), &[segment.len()]));
        }
        let mut out = Tensor::zeros(n_segments, m);
        let v = self.value(a);
        for (i, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(Error::Contract(format!(
                    "segment id {s} out of range for {n_segments} segments"
                )));
            }
            for (o, x) in out.row_mut(s).iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, segment)))
    }

    /// Summed binary cross-entropy of a `[n, 1]` score column against labels.
    pub fn bce(&mut self, scores: Var, labels: Arc<[f64]>) -> Result<Var> {
        let v = self.value(scores);
        if v.shape() != [labels.len(), 1] {
            return Err(Error::dim("bce", v.shape(), &[labels.len(), 1]));
        }
        let total = v
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&s, &y)| bce_value(s, y))
            .sum();
        Ok(self.push(Tensor::scalar(total), Op::Bce(scores, labels)))
    }

    /// Gradient of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (None, Op::Param) => Some(n.value.zeros_like()),
                (g, _) => g,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let da = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*bias) {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    if m > 0 {
                        for row in g.data().chunks(m) {
                            db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_matrix(1, m, db)?);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let da = hadamard(g, self.value(*b));
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = hadamard(g, self.value(*a));
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MulCol(a, col) => {
                let m = g.cols();
                let c = self.value(*col);
                if self.wants(*a) {
                    let mut da = g.clone();
                    if m > 0 {
                        for (row, &w) in da.data_mut().chunks_mut(m).zip(c.data()) {
                            row.iter_mut().for_each(|x| *x *= w);
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*col) {
                    let av = self.value(*a);
                    let dc = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *col, Tensor::from_matrix(g.rows(), 1, dc)?);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Exp(a) => self.accumulate(grads, *a, hadamard(g, out)),
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &s)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).len();
                self.accumulate(grads, *a, Tensor::new(shape, vec![gv; n])?);
            }
            Op::SumRows(a) => {
                let x = self.value(*a);
                let m = x.cols();
                let mut data = Vec::with_capacity(x.len());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, m));
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Concat(a, b) => {
                let ma = self.value(*a).cols();
                let mb = self.value(*b).cols();
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ma);
                let mut db = Vec::with_capacity(n * mb);
                for i in 0..n {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ma]);
                    db.extend_from_slice(&row[ma..]);
                }
                self.accumulate(grads, *a, Tensor::from_matrix(n, ma, da)?);
                self.accumulate(grads, *b, Tensor::from_matrix(n, mb, db)?);
            }
            Op::L1NormRows(a) => {
                let x = self.value(*a);
                let mut data = Vec::with_capacity(x.len());
                for (i, &gi) in g.data().iter().enumerate() {
                    data.extend(x.row(i).iter().map(|&xv| gi * sign(xv)));
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::L1Normalize(a, eps) => {
                // y = x / (n + eps), n = Σ|x|  ⇒  dx = g/(n+eps) − sign(x)·(g·x)/(n+eps)²
                let x = self.value(*a);
                let mut data = Vec::with_capacity(x.len());
                for i in 0..x.rows() {
                    let xr = x.row(i);
                    let gr = g.row(i);
                    let denom = xr.iter().map(|v| v.abs()).sum::<f64>() + eps;
                    let dot: f64 = gr.iter().zip(xr).map(|(p, q)| p * q).sum();
                    let k = dot / (denom * denom);
                    data.extend(gr.iter().zip(xr).map(|(&gv, &xv)| gv / denom - sign(xv) * k));
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Gather(a, index) => {
                let x = self.value(*a);
                let mut da = x.zeros_like();
                for (k, &i) in index.iter().enumerate() {
                    for (d, gv) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::SegmentSum(a, segment) => {
                let x = self.value(*a);
                let da = g.gather_rows(segment)?;
                debug_assert_eq!(da.shape(), x.shape());
                self.accumulate(grads, *a, da);
            }
            Op::Bce(scores, labels) => {
                let gv = g.data()[0];
                let s = self.value(*scores);
                let data = s
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&si, &y)| gv * bce_grad(si, y))
                    .collect();
                self.accumulate(grads, *scores, Tensor::new(s.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`. Parameters unreachable from the loss get zeros;
    /// other values that did not receive a gradient return `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter leaf.
    pub fn wrt(&self, v: Var) -> Result<&Tensor> {
        self.get(v)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for value {}", v.0)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("hadamard of equal shapes")
}

fn bce_value(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

fn bce_grad(score: f64, label: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&score) {
        return 0.0;
    }
    (1.0 - label) / (1.0 - score) - label / score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v]).unwrap()
    }

    #[test]
    fn linear_sum_gradient_is_input_stacked() {
        // loss = Σ (x · W) with x = [1, 1]
        let mut tape = Tape::new();
        let x = tape.constant(row(&[1.0, 1.0]));
        let w = tape.param(Tensor::from_rows(&[[0.3, -0.2], [0.7, 1.1]]).unwrap());
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let x = tape.constant(Tensor::scalar(1.0));
        let z = tape.matmul(x, w).unwrap();
        let s = tape.sigmoid(z);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0));
        let stray = tape.param(Tensor::zeros(3, 2));
        let loss = tape.mul(a, a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[4.0]);
        assert_eq!(grads.wrt(stray).unwrap(), &Tensor::zeros(3, 2));
    }

    #[test]
    fn records_are_topologically_ordered() {
        let mut tape = Tape::new();
        let a = tape.param(row(&[1.0, -2.0]));
        let b = tape.relu(a);
        let c = tape.concat(a, b).unwrap();
        let _ = tape.sum(c);
        for rec in tape.records() {
            assert!(rec.inputs.iter().all(|i| i.id() < rec.output.id()));
        }
        let kinds: Vec<_> = tape.records().map(|r| r.kind).collect();
        assert_eq!(kinds, ["param", "relu", "concat", "sum"]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 3));
        let b = tape.param(Tensor::zeros(2, 2));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn bce_of_sigmoid_has_residual_gradient() {
        for &(z, y) in &[(-2.3, 1.0), (0.0, 0.0), (1.7, 0.0), (4.0, 1.0)] {
            let mut tape = Tape::new();
            let zv = tape.param(Tensor::scalar(z));
            let s = tape.sigmoid(zv);
            let loss = tape.bce(s, Arc::from(vec![y])).unwrap();
            let g = tape.backward(loss).unwrap().wrt(zv).unwrap().data()[0];
            assert!((g - (sigmoid(z) - y)).abs() < 1e-10, "z={z} y={y} g={g}");
        }
    }

    #[test]
    fn segment_sum_and_gather_are_adjoint() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[1.0], [2.0], [3.0]]).unwrap());
        let seg: Arc<[usize]> = Arc::from(vec![1, 0, 1]);
        let s = tape.segment_sum(x, seg, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 4.0]);
        let w = tape.constant(Tensor::from_rows(&[[10.0], [100.0]]).unwrap());
        let p = tape.mul(s, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[100.0, 10.0, 100.0]);
    }
}
