//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse.
//! A graph is built fresh for every forward pass and dropped afterwards.

use crate::array::Array;
use crate::autodiff::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::linalg::gemm;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Deconv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    FrobeniusSq(Var),
    Sum(Var),
}

struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Gradient from the last [`Graph::backward`], if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient from the last backward pass, zeros when unreached.
    pub fn grad_or_zeros(&self, v: Var) -> Array {
        self.grad(v).cloned().unwrap_or_else(|| Array::zeros(self.value(v).shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, spec: &ConvSpec, weight: Var, bias: Var) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(input), spec, self.value(weight), self.value(bias))?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, spec: *spec }, rg))
    }

    /// Transposed convolution of `input` (channels = `spec.out_channels`)
    /// onto a `target_hw` map with `spec.in_channels` channels.
    pub fn deconv2d(
        &mut self,
        input: Var,
        spec: &ConvSpec,
        weight: Var,
        bias: Var,
        target_hw: (usize, usize),
    ) -> Result<Var> {
        let out = conv::deconv2d_forward(self.value(input), spec, self.value(weight), self.value(bias), target_hw)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Deconv2d { input, weight, bias, spec: *spec }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Squared Frobenius norm, as a one-element array.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).frobenius_sq());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::FrobeniusSq(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Sign pattern (`input > 0`) of every ReLU in the graph, in creation
    /// order. Two evaluations with equal patterns lie on the same linear
    /// piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.value(x).data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    /// Reverse sweep from a scalar root. Gradients of earlier sweeps are
    /// discarded; within one sweep contributions from every use of a node
    /// are summed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Array::full(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, spec } => {
                    let (dx, dw, db) =
                        conv::conv2d_backward(self.value(input), &spec, self.value(weight), &g);
                    self.accumulate(input, dx);
                    self.accumulate(weight, dw);
                    self.accumulate(bias, db);
                }
                Op::Deconv2d { input, weight, bias, spec } => {
                    let (dy, dw, db) =
                        conv::deconv2d_backward(self.value(input), &spec, self.value(weight), &g);
                    self.accumulate(input, dy);
                    self.accumulate(weight, dw);
                    self.accumulate(bias, db);
                }
                Op::Relu(x) => {
                    if self.requires_grad(x) {
                        let mut dx = g.clone();
                        for (d, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        }
                        self.accumulate(x, dx);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.scale(-1.0));
                }
                Op::Scale(a, c) => self.accumulate(a, g.scale(c)),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                    let n = self.value(b).shape()[1];
                    if self.requires_grad(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, 1.0, g.data(), false, self.value(b).data(), true, 0.0, &mut da);
                        self.accumulate(a, Array::new(vec![m, k], da)?);
                    }
                    if self.requires_grad(b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, 1.0, self.value(a).data(), true, g.data(), false, 0.0, &mut db);
                        self.accumulate(b, Array::new(vec![k, n], db)?);
                    }
                }
                Op::Transpose(a) => self.accumulate(a, g.transpose()?),
                Op::Reshape(a) => {
                    let shape = self.value(a).shape().to_vec();
                    self.accumulate(a, g.clone().into_reshape(&shape)?);
                }
                Op::FrobeniusSq(a) => {
                    let s = 2.0 * g.item();
                    let da = self.value(a).scale(s);
                    self.accumulate(a, da);
                }
                Op::Sum(a) => {
                    let da = Array::full(self.value(a).shape(), g.item());
                    self.accumulate(a, da);
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Array) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.axpy(1.0, &delta),
            None => node.grad = Some(delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.param(Array::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.constant(Array::eye(2));
        let b = Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let bv = g.param(b.clone());
        let y = g.matmul(i, bv).unwrap();
        assert_eq!(g.value(y), &b);
    }

    #[test]
    fn frobenius_value_and_gradient() {
        let mut g = Graph::new();
        let a = Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let av = g.param(a.clone());
        let f = g.frobenius_sq(av);
        assert_eq!(g.value(f).item(), 30.0);
        g.backward(f).unwrap();
        assert_eq!(g.grad(av).unwrap(), &a.scale(2.0));
    }

    #[test]
    fn square_of_three() {
        let mut g = Graph::new();
        let x = g.param(Array::new(vec![1], vec![3.0]).unwrap());
        let f = g.frobenius_sq(x);
        g.backward(f).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Array::new(vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Array::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Array::full(&[2], 1.0));
        let p = g.param(Array::full(&[2], 2.0));
        let y = g.sub(p, c).unwrap();
        let f = g.frobenius_sq(y);
        g.backward(f).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut g = Graph::new();
        let a = g.param(Array::zeros(&[2, 3]));
        let b = g.param(Array::zeros(&[2, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Config(_))));
        assert!(matches!(g.matmul(a, b), Err(Error::Config(_))));
    }
}
