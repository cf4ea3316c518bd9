//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node in evaluation order.
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! gradients for every node that depends on a parameter. Fused kernels
//! (the selective scan, the detection losses) plug in through [`CustomOp`].

use super::tensor::{matmul, softmax_lastdim, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a fused operation.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Softmax(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not depend on any parameter.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    flops: u64,
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

    /// Floating-point operations spent in matrix products and softmaxes so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let (m, k) = self.value(a).dims2()?;
        let n = out.shape()[1];
        self.flops += 2 * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} cannot be added to rows of {:?}",
                self.value(bias).shape(),
                self.value(x).shape()
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Multiplies `x` by the single-element tensor `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(x).scale(sv);
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        let rg = self.rg(&[x]);
        self.push(out, Op::ScaleConst(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softplus(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale_const(x, -1.0)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Column means of an `m×n` tensor, shaped `1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MeanRows(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `out[i] = x[idx[i]]` over the rows of a 2-D tensor.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Dimension(format!(
                "row index {bad} out of range for {m} rows"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(vec![idx.len(), n], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, pn) = self.value(p).dims2()?;
            if pn != n {
                return Err(Error::Dimension(format!(
                    "cannot stack {:?} under rows of width {n}",
                    self.value(p).shape()
                )));
            }
            rows += m;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let out = softmax_lastdim(self.value(x))?;
        self.flops += 4 * out.len() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Records a fused operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.accumulate(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, matmul(g, &bv.transpose2()?)?);
                send(*b, matmul(&av.transpose2()?, g)?);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(self.value(*b), |x, y| x * y)?);
                send(*b, g.zip_map(self.value(*a), |x, y| x * y)?);
            }
            Op::AddRow(x, bias) => {
                send(*x, g.clone());
                let n = g.shape()[1];
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let bshape = self.value(*bias).shape().to_vec();
                send(*bias, Tensor::new(bshape, gb)?);
            }
            Op::Scale(x, s) => {
                let sv = self.value(*s).item()?;
                send(*x, g.scale(sv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(a, b)| a * b)
                    .sum();
                let sshape = self.value(*s).shape().to_vec();
                send(*s, Tensor::new(sshape, vec![dot])?);
            }
            Op::ScaleConst(x, c) => send(*x, g.scale(*c)),
            Op::Relu(x) => send(
                *x,
                g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?,
            ),
            Op::Tanh(x) => send(*x, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?),
            Op::Softplus(x) => send(*x, g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv))?),
            Op::Exp(x) => send(*x, g.zip_map(&node.value, |gv, y| gv * y)?),
            Op::Sum(x) => send(*x, Tensor::full(self.value(*x).shape(), g.item()?)),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                send(*x, Tensor::full(self.value(*x).shape(), g.item()? / n));
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).dims2()?;
                let gd = g.data();
                let mut out = vec![0.0; m * n];
                for row in out.chunks_mut(n) {
                    for (o, v) in row.iter_mut().zip(gd) {
                        *o = v / m as f64;
                    }
                }
                send(*x, Tensor::new(vec![m, n], out)?);
            }
            Op::Transpose(x) => send(*x, g.transpose2()?),
            Op::Reshape(x) => send(*x, g.reshape(self.value(*x).shape())?),
            Op::GatherRows(x, idx) => {
                let (m, n) = self.value(*x).dims2()?;
                let mut out = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        out[i * n + c] += g.data()[r * n + c];
                    }
                }
                send(*x, Tensor::new(vec![m, n], out)?);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let shape = self.value(p).shape().to_vec();
                    send(
                        p,
                        Tensor::new(shape, g.data()[offset..offset + len].to_vec())?,
                    );
                    offset += len;
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap_or(&1);
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out
                    .chunks_mut(n)
                    .zip(y.data().chunks(n))
                    .zip(g.data().chunks(n))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        o[i] = yr[i] * (gr[i] - dot);
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (v, t) in inputs.iter().zip(gs) {
                    send(*v, t);
                }
            }
        }
        Ok(())
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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
