//! Per-step dynamic tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is a topological
//! order by construction and backward is a single reverse sweep. Values are
//! checked for finiteness as each node is created.
//!
//! `stop_gradient` outputs are recorded. A graph built with
//! [`Graph::replaying`] returns the recorded values from its stop-gradient
//! calls instead of the live input, which lets a finite-difference probe
//! treat detached quantities as the constants they are during backward.

use crate::diff::store::{ParamId, ParameterStore};
use crate::error::DiffError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `scale * x + shift`, elementwise with constant coefficients.
    Linear {
        input: NodeId,
        scale: f64,
    },
    /// Vector times a scalar node.
    ScaleBy {
        input: NodeId,
        factor: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    StopGradient,
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Mse(NodeId, NodeId),
    Sum(NodeId),
    Index(NodeId, usize),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Variable | Op::Param(_) | Op::StopGradient => Vec::new(),
            Op::Affine {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::ScaleBy { input, factor } => vec![*input, *factor],
            Op::Linear { input, .. } => vec![*input],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Index(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `node`, or `None` if no differentiable path reaches it.
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `node`, zero-filled when unreachable.
    pub fn get_or_zero(&self, node: NodeId, len: usize) -> Vec<f64> {
        self.get(node)
            .map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    detached: Vec<Tensor>,
    replay: Option<Vec<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose `stop_gradient` calls return `frozen` values in order.
    pub fn replaying(frozen: Vec<Tensor>) -> Self {
        Self {
            replay: Some(frozen),
            ..Self::default()
        }
    }

    /// Values produced by `stop_gradient` so far, in call order.
    pub fn detached_values(&self) -> &[Tensor] {
        &self.detached
    }

    pub fn take_detached(&mut self) -> Vec<Tensor> {
        std::mem::take(&mut self.detached)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    pub fn scalar(&self, node: NodeId) -> f64 {
        self.nodes[node.0].value.item()
    }

    pub fn requires_grad(&self, node: NodeId) -> bool {
        self.nodes[node.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<NodeId, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Variable | Op::Param(_) => true,
            Op::Constant | Op::StopGradient => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn vals(&self, node: NodeId) -> &[f64] {
        self.nodes[node.0].value.values()
    }

    fn shape(&self, node: NodeId) -> &[usize] {
        self.nodes[node.0].value.shape()
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), DiffError> {
        if self.vals(a).len() != self.vals(b).len() {
            return Err(DiffError::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, DiffError> {
        self.push(value, Op::Constant, "constant")
    }

    pub fn constant_vec(&mut self, values: &[f64]) -> Result<NodeId, DiffError> {
        self.constant(Tensor::vector(values.to_vec()))
    }

    /// A differentiable input that is not a stored parameter.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId, DiffError> {
        self.push(value, Op::Variable, "variable")
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Result<NodeId, DiffError> {
        self.push(store.value(id).clone(), Op::Param(id), "param")
    }

    /// `weight · input + bias` with `weight` of shape `[out, in]`.
    pub fn affine(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        let wshape = self.shape(weight).to_vec();
        let (rows, cols) = match wshape.as_slice() {
            [r, c] => (*r, *c),
            _ => {
                return Err(DiffError::ShapeMismatch {
                    op: "affine",
                    expected: vec![0, 0],
                    got: wshape,
                })
            }
        };
        if self.vals(input).len() != cols {
            return Err(DiffError::ShapeMismatch {
                op: "affine",
                expected: vec![cols],
                got: self.shape(input).to_vec(),
            });
        }
        if self.vals(bias).len() != rows {
            return Err(DiffError::ShapeMismatch {
                op: "affine",
                expected: vec![rows],
                got: self.shape(bias).to_vec(),
            });
        }
        let x = self.vals(input);
        let w = self.vals(weight);
        let b = self.vals(bias);
        let out = (0..rows)
            .map(|r| {
                let row = &w[r * cols..(r + 1) * cols];
                b[r] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect();
        self.push(
            Tensor::vector(out),
            Op::Affine {
                input,
                weight,
                bias,
            },
            "affine",
        )
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, DiffError> {
        self.same_len(name, a, b)?;
        let out: Vec<f64> = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, op, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `scale * a + shift` elementwise.
    pub fn linear(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId, DiffError> {
        let t = &self.nodes[a.0].value;
        let out = t.values().iter().map(|v| scale * v + shift).collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::Linear { input: a, scale },
            "linear",
        )
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, DiffError> {
        self.linear(a, factor, 0.0)
    }

    /// Multiplies every element of `a` by the scalar node `factor`.
    pub fn scale_by(&mut self, a: NodeId, factor: NodeId) -> Result<NodeId, DiffError> {
        if self.vals(factor).len() != 1 {
            return Err(DiffError::NotScalar(self.shape(factor).to_vec()));
        }
        let s = self.vals(factor)[0];
        let t = &self.nodes[a.0].value;
        let out = t.values().iter().map(|v| s * v).collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::ScaleBy { input: a, factor },
            "scale_by",
        )
    }

    fn map(
        &mut self,
        a: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64) -> f64,
    ) -> Result<NodeId, DiffError> {
        let t = &self.nodes[a.0].value;
        let out = t.values().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, op, name)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map(a, Op::Sigmoid(a), "sigmoid", |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    /// Concatenates 1-D nodes in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let out: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.vals(*p).iter().copied())
            .collect();
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), "concat")
    }

    /// Identity on values; blocks every gradient path through it.
    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = match &self.replay {
            Some(frozen) => match frozen.get(self.detached.len()) {
                Some(v) if v.len() == self.vals(a).len() => v.clone(),
                _ => {
                    return Err(DiffError::ShapeMismatch {
                        op: "stop_gradient replay",
                        expected: self.shape(a).to_vec(),
                        got: Vec::new(),
                    })
                }
            },
            None => self.nodes[a.0].value.clone(),
        };
        self.detached.push(value.clone());
        self.push(value, Op::StopGradient, "stop_gradient")
    }

    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId, DiffError> {
        let x = self.vals(logits);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFinite { op: "softmax" });
        }
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = exps.iter().map(|e| e / total).collect();
        self.push(Tensor::vector(out), Op::Softmax(logits), "softmax")
    }

    pub fn log_softmax(&mut self, logits: NodeId) -> Result<NodeId, DiffError> {
        let x = self.vals(logits);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = x.iter().map(|v| v - lse).collect();
        self.push(Tensor::vector(out), Op::LogSoftmax(logits), "log_softmax")
    }

    /// Mean of squared componentwise differences.
    pub fn mse(&mut self, prediction: NodeId, target: NodeId) -> Result<NodeId, DiffError> {
        self.same_len("mse", prediction, target)?;
        let p = self.vals(prediction);
        let t = self.vals(target);
        let n = p.len().max(1) as f64;
        let v = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Tensor::scalar(v), Op::Mse(prediction, target), "mse")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let v = self.vals(a).iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a), "sum")
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId, DiffError> {
        let len = self.vals(a).len();
        let v = *self.vals(a).get(i).ok_or(DiffError::ShapeMismatch {
            op: "index",
            expected: vec![i + 1],
            got: vec![len],
        })?;
        self.push(Tensor::scalar(v), Op::Index(a, i), "index")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(DiffError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if root.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for p in node.op.parents() {
                if p.0 >= idx {
                    return Err(DiffError::Cycle {
                        node: idx,
                        parent: p.0,
                    });
                }
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.values();
        let wants = |p: NodeId| self.nodes[p.0].requires_grad;
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) | Op::StopGradient => {}
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let x = self.vals(*input);
                let w = self.vals(*weight);
                let cols = x.len();
                if wants(*weight) {
                    let gw = slot(grads, *weight, w.len());
                    for (r, gr) in g.iter().enumerate() {
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (acc, xi) in row.iter_mut().zip(x) {
                            *acc += gr * xi;
                        }
                    }
                }
                if wants(*input) {
                    let gx = slot(grads, *input, cols);
                    for (r, gr) in g.iter().enumerate() {
                        let row = &w[r * cols..(r + 1) * cols];
                        for (acc, wi) in gx.iter_mut().zip(row) {
                            *acc += gr * wi;
                        }
                    }
                }
                if wants(*bias) {
                    accumulate(slot(grads, *bias, g.len()), g.iter().copied());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(slot(grads, *a, g.len()), g.iter().copied());
                }
                if wants(*b) {
                    accumulate(slot(grads, *b, g.len()), g.iter().copied());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(slot(grads, *a, g.len()), g.iter().copied());
                }
                if wants(*b) {
                    accumulate(slot(grads, *b, g.len()), g.iter().map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = self.vals(*b);
                    accumulate(
                        slot(grads, *a, g.len()),
                        g.iter().zip(bv).map(|(gi, bi)| gi * bi),
                    );
                }
                if wants(*b) {
                    let av = self.vals(*a);
                    accumulate(
                        slot(grads, *b, g.len()),
                        g.iter().zip(av).map(|(gi, ai)| gi * ai),
                    );
                }
            }
            Op::Linear { input, scale } => {
                if wants(*input) {
                    accumulate(slot(grads, *input, g.len()), g.iter().map(|v| scale * v));
                }
            }
            Op::ScaleBy { input, factor } => {
                let s = self.vals(*factor)[0];
                if wants(*input) {
                    accumulate(slot(grads, *input, g.len()), g.iter().map(|v| s * v));
                }
                if wants(*factor) {
                    let x = self.vals(*input);
                    let d: f64 = g.iter().zip(x).map(|(gi, xi)| gi * xi).sum();
                    slot(grads, *factor, 1)[0] += d;
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    accumulate(
                        slot(grads, *a, g.len()),
                        g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)),
                    );
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    accumulate(
                        slot(grads, *a, g.len()),
                        g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)),
                    );
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.vals(*p).len();
                    if wants(*p) {
                        accumulate(
                            slot(grads, *p, len),
                            g[offset..offset + len].iter().copied(),
                        );
                    }
                    offset += len;
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    accumulate(
                        slot(grads, *a, g.len()),
                        g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)),
                    );
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let total: f64 = g.iter().sum();
                    accumulate(
                        slot(grads, *a, g.len()),
                        g.iter().zip(y).map(|(gi, yi)| gi - yi.exp() * total),
                    );
                }
            }
            Op::Mse(a, b) => {
                let av = self.vals(*a);
                let bv = self.vals(*b);
                let k = 2.0 * g[0] / av.len().max(1) as f64;
                if wants(*a) {
                    accumulate(
                        slot(grads, *a, av.len()),
                        av.iter().zip(bv).map(|(p, t)| k * (p - t)),
                    );
                }
                if wants(*b) {
                    accumulate(
                        slot(grads, *b, bv.len()),
                        av.iter().zip(bv).map(|(p, t)| -k * (p - t)),
                    );
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let len = self.vals(*a).len();
                    accumulate(slot(grads, *a, len), std::iter::repeat_n(g[0], len));
                }
            }
            Op::Index(a, i) => {
                if wants(*a) {
                    let len = self.vals(*a).len();
                    slot(grads, *a, len)[*i] += g[0];
                }
            }
        }
    }

    /// Accumulates d`loss`/dparam into `store` for every parameter on the tape.
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore) -> Result<(), DiffError> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads.get(NodeId(idx)) {
                    store.accumulate_grad(id, g);
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], node: NodeId, len: usize) -> &mut [f64] {
    grads[node.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
