//! Reverse-mode differentiation over an append-only node list.
//!
//! Nodes are pushed in evaluation order, so the list index is already a
//! topological order and `backward` is a single reverse sweep.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Graph::custom`]: given the input values, the output
/// value and the upstream gradient, return one gradient per input.
pub type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Expand(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    GmpRows { input: Var, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { input: Var, start: usize },
    MeanAxis { input: Var, axis: usize },
    Sum(Var),
    Exp(Var),
    Log(Var),
    Norm(Var),
    Gelu(Var),
    LayerNorm { input: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Gather { input: Var, indices: Vec<usize> },
    Reshape(Var),
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MulScalar(..) => "mul_scalar",
            Op::Expand(..) => "expand",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Softmax(..) => "softmax",
            Op::GmpRows { .. } => "gmp_rows",
            Op::Concat { .. } => "concat",
            Op::SliceRows { .. } => "slice_rows",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Sum(..) => "sum",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Norm(..) => "norm",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::Reshape(..) => "reshape",
            Op::Custom { .. } => "custom",
        }
    }
}

/// A differentiable value: the forward result plus its accumulated gradient.
pub struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Accumulated gradient; zeros if nothing has flowed here yet.
    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
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

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Tensor {
        self.nodes[v.0].grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Trainable input. Receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        self.push(v, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if av.shape().len() != 2 || rv.shape() != [1, av.cols()] {
            return Err(self.mismatch("add_row", a, row));
        }
        let n = av.cols();
        let mut out = av.data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        let v = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every element of `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(self.mismatch("mul_scalar", a, s));
        }
        let k = self.value(s).item();
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::MulScalar(a, s), &[a, s])
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::InvalidShape {
                shape: self.shape(s).to_vec(),
                reason: "expand takes a single-element tensor".into(),
            });
        }
        let v = Tensor::filled(shape, self.value(s).item());
        self.push(v, Op::Expand(s), &[s])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax();
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Column-wise max over rows (q×r → 1×r). Ties go to the lowest row.
    pub fn gmp_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (q, r) = av.expect_matrix("gmp_rows")?;
        let mut argmax = vec![0usize; r];
        let mut out = av.row_slice(0).to_vec();
        for i in 1..q {
            for (j, &x) in av.row_slice(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        let v = Tensor::from_parts(vec![1, r], out);
        self.push(v, Op::GmpRows { input: a, argmax }, &[a])
    }

    /// Concatenates 2-d tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        let (_, n0) = self.value(first).expect_matrix("concat")?;
        let m0 = self.value(first).shape()[0];
        for &p in parts {
            let (m, n) = self.value(p).expect_matrix("concat")?;
            if (axis == 0 && n != n0) || (axis == 1 && m != m0) || axis > 1 {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let v = if axis == 0 {
            let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
            let mut data = Vec::with_capacity(rows * n0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_parts(vec![rows, n0], data)
        } else {
            let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let mut data = Vec::with_capacity(m0 * cols);
            for r in 0..m0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Tensor::from_parts(vec![m0, cols], data)
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push(v, op, parts)
    }

    /// Rows `start..start+len` of a 2-d tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_matrix("slice_rows")?;
        if len == 0 || start + len > m {
            return Err(Error::InvalidShape {
                shape: vec![m, n],
                reason: format!("row slice {start}..{} out of range", start + len),
            });
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let v = Tensor::from_parts(vec![len, n], data);
        self.push(v, Op::SliceRows { input: a, start }, &[a])
    }

    /// Mean over `axis` of a 2-d tensor; keeps the reduced axis with extent 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.expect_matrix("mean_axis")?;
        let v = match axis {
            0 => av.mean_rows(),
            1 => Tensor::from_parts(
                vec![m, 1],
                (0..m).map(|r| av.row_slice(r).iter().sum::<f64>() / n as f64).collect(),
            ),
            _ => {
                return Err(Error::InvalidShape {
                    shape: vec![m, n],
                    reason: format!("axis {axis} out of range"),
                })
            }
        };
        self.push(v, Op::MeanAxis { input: a, axis }, &[a])
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    /// L2 norm of all elements. The gradient at the origin is taken as zero.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(v, Op::Norm(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Row-wise layer norm of an m×n input with 1×n gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(a).expect_matrix("layer_norm")?;
        if self.shape(gain) != [1, n] {
            return Err(self.mismatch("layer_norm", a, gain));
        }
        if self.shape(bias) != [1, n] {
            return Err(self.mismatch("layer_norm", a, bias));
        }
        let (xv, gv, bv) = (self.value(a), self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = xv.row_slice(r);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mu) * inv;
                xhat[r * n + c] = h;
                out[r * n + c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        let v = Tensor::from_parts(vec![m, n], out);
        let op = Op::LayerNorm {
            input: a,
            gain,
            bias,
            xhat: Tensor::from_parts(vec![m, n], xhat),
            inv_std,
        };
        self.push(v, op, &[a, gain, bias])
    }

    /// Picks elements by flat index into a 1×k row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= av.len()) {
            return Err(Error::InvalidShape {
                shape: av.shape().to_vec(),
                reason: format!("gather indices {indices:?} out of range"),
            });
        }
        let data = indices.iter().map(|&i| av.data()[i]).collect();
        let v = Tensor::from_parts(vec![1, indices.len()], data);
        let op = Op::Gather {
            input: a,
            indices: indices.to_vec(),
        };
        self.push(v, op, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Registers an operation whose forward value was computed by the caller
    /// and whose backward rule is supplied as a closure.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Result<Var> {
        let op = Op::Custom {
            inputs: inputs.to_vec(),
            backward,
        };
        self.push(value, op, inputs)
    }

    /// Cosine similarity of two equally sized tensors, as a differentiable scalar.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        if self.value(u).len() != self.value(v).len() {
            return Err(self.mismatch("cosine", u, v));
        }
        if self.value(u).norm() < 1e-12 || self.value(v).norm() < 1e-12 {
            return Err(Error::ZeroNorm("cosine"));
        }
        let v = if self.shape(u) == self.shape(v) {
            v
        } else {
            let shape = self.shape(u).to_vec();
            self.reshape(v, &shape)?
        };
        let prod = self.mul(u, v)?;
        let dot = self.sum(prod)?;
        let nu = self.norm(u)?;
        let nv = self.norm(v)?;
        let denom = self.mul(nu, nv)?;
        self.div(dot, denom)
    }

    /// Accumulates d(loss)/d(node) into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (input, contrib) in self.local_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let ga = zip(g, val(*b), |g, y| g * y);
                let gb = zip(g, val(*a), |g, x| g * x);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Div(a, b) => {
                let ga = zip(g, val(*b), |g, y| g / y);
                let gb = zip(g, out, |g, q| g * q);
                let gb = zip(&gb, val(*b), |gq, y| -gq / y);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::AddRow(a, row) => {
                let n = g.cols();
                let mut gr = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (o, x) in gr.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
                vec![(*a, g.clone()), (*row, Tensor::from_parts(vec![1, n], gr))]
            }
            Op::MulScalar(a, s) => {
                let k = val(*s).item();
                let gs = g.dot(val(*a)).expect("same shape");
                vec![(*a, g.map(|x| x * k)), (*s, Tensor::filled(val(*s).shape(), gs))]
            }
            Op::Expand(s) => vec![(*s, Tensor::filled(val(*s).shape(), g.sum()))],
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(val(*b));
                let gb = val(*a).t_matmul(g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose().expect("2-d"))],
            Op::Softmax(a) => {
                let n = out.cols();
                let mut ga = vec![0.0; out.len()];
                for ((gy, y), o) in g.data().chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n)) {
                    let inner: f64 = gy.iter().zip(y).map(|(g, y)| g * y).sum();
                    for c in 0..n {
                        o[c] = y[c] * (gy[c] - inner);
                    }
                }
                vec![(*a, Tensor::from_parts(out.shape().to_vec(), ga))]
            }
            Op::GmpRows { input, argmax } => {
                let shape = val(*input).shape().to_vec();
                let r = shape[1];
                let mut ga = vec![0.0; shape[0] * r];
                for (j, &row) in argmax.iter().enumerate() {
                    ga[row * r + j] = g.data()[j];
                }
                vec![(*input, Tensor::from_parts(shape, ga))]
            }
            Op::Concat { parts, axis } => {
                let mut res = Vec::with_capacity(parts.len());
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).len();
                        let data = g.data()[offset..offset + len].to_vec();
                        res.push((p, Tensor::from_parts(val(p).shape().to_vec(), data)));
                        offset += len;
                    }
                } else {
                    let m = g.shape()[0];
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        let mut data = Vec::with_capacity(m * w);
                        for r in 0..m {
                            data.extend_from_slice(&g.row_slice(r)[col..col + w]);
                        }
                        res.push((p, Tensor::from_parts(vec![m, w], data)));
                        col += w;
                    }
                }
                res
            }
            Op::SliceRows { input, start } => {
                let shape = val(*input).shape().to_vec();
                let n = shape[1];
                let mut ga = vec![0.0; shape[0] * n];
                ga[start * n..start * n + g.len()].copy_from_slice(g.data());
                vec![(*input, Tensor::from_parts(shape, ga))]
            }
            Op::MeanAxis { input, axis } => {
                let shape = val(*input).shape().to_vec();
                let (m, n) = (shape[0], shape[1]);
                let mut ga = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] = if *axis == 0 {
                            g.data()[c] / m as f64
                        } else {
                            g.data()[r] / n as f64
                        };
                    }
                }
                vec![(*input, Tensor::from_parts(shape, ga))]
            }
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
            Op::Exp(a) => vec![(*a, zip(g, out, |g, y| g * y))],
            Op::Log(a) => vec![(*a, zip(g, val(*a), |g, x| g / x))],
            Op::Norm(a) => {
                let n = out.item();
                let k = if n > 0.0 { g.item() / n } else { 0.0 };
                vec![(*a, val(*a).map(|x| x * k))]
            }
            Op::Gelu(a) => {
                let d = val(*a).map(|x| {
                    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
                });
                vec![(*a, zip(g, &d, |g, d| g * d))]
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = (xhat.shape()[0], xhat.shape()[1]);
                let gv = val(*gain).data();
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let gr = g.row_slice(r);
                    let hr = xhat.row_slice(r);
                    for c in 0..n {
                        dgain[c] += gr[c] * hr[c];
                        dbias[c] += gr[c];
                        dxhat[c] = gr[c] * gv[c];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum();
                    let k = inv_std[r] / n as f64;
                    for c in 0..n {
                        dx[r * n + c] = k * (n as f64 * dxhat[c] - s1 - hr[c] * s2);
                    }
                }
                vec![
                    (*input, Tensor::from_parts(vec![m, n], dx)),
                    (*gain, Tensor::from_parts(vec![1, n], dgain)),
                    (*bias, Tensor::from_parts(vec![1, n], dbias)),
                ]
            }
            Op::Gather { input, indices } => {
                let mut ga = Tensor::zeros(val(*input).shape());
                for (&idx, gv) in indices.iter().zip(g.data()) {
                    ga.data_mut()[idx] += gv;
                }
                vec![(*input, ga)]
            }
            Op::Reshape(a) => vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()))],
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                inputs.iter().copied().zip(backward(&vals, out, g)).collect()
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}
