//! Tape-based reverse-mode differentiation over whole-tensor ops.
//!
//! Each op appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and accumulates vector-Jacobian products into
//! every node that depends on a gradient-requiring leaf.

use std::borrow::Cow;

use super::ops::{self, ConvGeometry};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Elu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
    Bce {
        pred: Var,
        target: T,
    },
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node<'a, T: Scalar> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
///
/// Parameters are borrowed for the lifetime of the tape, so recording a
/// forward pass never copies weights.
#[derive(Debug)]
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if it requires one.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `param`'s gradient buffer.
    pub fn accumulate_into(&self, var: Var, param: &mut Tensor<T>) -> Result<()> {
        match self.get(var) {
            Some(g) => param.accumulate_grad(g),
            None => {
                if param.grad().is_none() {
                    param.zero_grad();
                }
                Ok(())
            }
        }
    }
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, var: Var) -> Result<&Node<'a, T>> {
        self.nodes
            .get(var.0)
            .ok_or_else(|| Error::MissingGraph(format!("node {} is not on this tape", var.0)))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_values()), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), Cow::Borrowed(tensor.values()), Op::Leaf, false)
    }

    /// A borrowed leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), Cow::Borrowed(tensor.values()), Op::Leaf, true)
    }

    /// An owned leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_values()), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &[T] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn tensor(&self, var: Var) -> Tensor<T> {
        let node = &self.nodes[var.0];
        Tensor::new(node.shape.clone(), node.value.to_vec()).expect("tape nodes are well formed")
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k, b) = (self.node(input)?, self.node(kernels)?, self.node(bias)?);
        let geometry = ConvGeometry::infer(&x.shape, &k.shape, &b.shape, stride, padding)?;
        let shape = geometry.output_shape();
        let mut out = vec![T::zero(); shape.iter().product()];
        ops::conv2d_forward(&geometry, &x.value, &k.value, &b.value, &mut out);
        let rg = self.needs(&[input, kernels, bias]);
        let op = Op::Conv2d {
            input,
            kernels,
            bias,
            geometry,
        };
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.node(input)?, self.node(weights)?, self.node(bias)?);
        let (_, m) = ops::dense_shapes(&x.shape, &w.shape, &b.shape)?;
        let mut out = vec![T::zero(); m];
        ops::dense_forward(&x.value, &w.value, &b.value, &mut out);
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(vec![m], Cow::Owned(out), Op::Dense { input, weights, bias }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let node = self.node(x)?;
        let out: Vec<T> = node.value.iter().map(|&v| f(v)).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::elu_scalar, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::sigmoid_scalar, Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let node = self.node(x)?;
        if shape.iter().product::<usize>() != node.value.len() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                node.shape
            )));
        }
        let value = node.value.to_vec();
        let rg = node.requires_grad;
        Ok(self.push(shape, Cow::Owned(value), Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let s = node.value.iter().fold(T::zero(), |a, b| a + *b);
        let rg = node.requires_grad;
        Ok(self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.node(pred)?, self.node(target)?);
        if p.shape != t.shape {
            return Err(Error::InvalidShape(format!(
                "mse between {:?} and {:?}",
                p.shape, t.shape
            )));
        }
        let v = ops::mse_value(&p.value, &t.value);
        let rg = self.needs(&[pred, target]);
        Ok(self.push(vec![1], Cow::Owned(vec![v]), Op::Mse { pred, target }, rg))
    }

    /// Binary cross entropy of a single-element probability node.
    pub fn bce(&mut self, pred: Var, target: T) -> Result<Var> {
        ops::check_label(target)?;
        let p = self.node(pred)?;
        if p.value.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "bce expects a single probability, got {:?}",
                p.shape
            )));
        }
        let v = ops::bce_value(p.value[0], target);
        let rg = p.requires_grad;
        Ok(self.push(vec![1], Cow::Owned(vec![v]), Op::Bce { pred, target }, rg))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::InvalidShape("mean of zero terms".into()));
        }
        let mut s = T::zero();
        for &v in terms {
            let node = self.node(v)?;
            if node.value.len() != 1 {
                return Err(Error::InvalidShape(format!(
                    "mean expects scalar terms, got {:?}",
                    node.shape
                )));
            }
            s += node.value[0];
        }
        let n = T::from_usize(terms.len()).expect("length fits");
        let rg = self.needs(terms);
        Ok(self.push(vec![1], Cow::Owned(vec![s / n]), Op::Mean(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::MissingGraph("tape is empty".into()));
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar loss, got {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if root.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn take_slot(&self, grads: &mut [Option<Vec<T>>], var: Var) -> Option<Vec<T>> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[var.0].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]))
    }

    fn propagate(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
            } => {
                let mut gx = self.take_slot(grads, *input);
                let mut gk = self.take_slot(grads, *kernels);
                let mut gb = self.take_slot(grads, *bias);
                ops::conv2d_backward(
                    geometry,
                    self.value(*input),
                    self.value(*kernels),
                    g,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, *input, gx);
                restore(grads, *kernels, gk);
                restore(grads, *bias, gb);
            }
            Op::Dense { input, weights, bias } => {
                let mut gx = self.take_slot(grads, *input);
                let mut gw = self.take_slot(grads, *weights);
                let mut gb = self.take_slot(grads, *bias);
                ops::dense_backward(
                    self.value(*input),
                    self.value(*weights),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, *input, gx);
                restore(grads, *weights, gw);
                restore(grads, *bias, gb);
            }
            Op::Elu(x) => {
                if let Some(mut gx) = self.take_slot(grads, *x) {
                    let xs = self.value(*x);
                    for ((d, &gi), (&xi, &yi)) in gx.iter_mut().zip(g).zip(xs.iter().zip(node.value.iter())) {
                        *d += if xi > T::zero() { gi } else { gi * (yi + T::one()) };
                    }
                    grads[x.0] = Some(gx);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(mut gx) = self.take_slot(grads, *x) {
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(node.value.iter()) {
                        *d += gi * yi * (T::one() - yi);
                    }
                    grads[x.0] = Some(gx);
                }
            }
            Op::Reshape(x) => {
                if let Some(mut gx) = self.take_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, gi)| *d += *gi);
                    grads[x.0] = Some(gx);
                }
            }
            Op::Sum(x) => {
                if let Some(mut gx) = self.take_slot(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                    grads[x.0] = Some(gx);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = T::from_f64_lossy(2.0) * g[0] / T::from_usize(p.len()).expect("length fits");
                if let Some(mut gp) = self.take_slot(grads, *pred) {
                    for ((d, pi), ti) in gp.iter_mut().zip(p).zip(t) {
                        *d += scale * (*pi - *ti);
                    }
                    grads[pred.0] = Some(gp);
                }
                if let Some(mut gt) = self.take_slot(grads, *target) {
                    for ((d, pi), ti) in gt.iter_mut().zip(p).zip(t) {
                        *d -= scale * (*pi - *ti);
                    }
                    grads[target.0] = Some(gt);
                }
            }
            Op::Bce { pred, target } => {
                if let Some(mut gp) = self.take_slot(grads, *pred) {
                    gp[0] += g[0] * ops::bce_derivative(self.value(*pred)[0], *target);
                    grads[pred.0] = Some(gp);
                }
            }
            Op::Mean(terms) => {
                let share = g[0] / T::from_usize(terms.len()).expect("length fits");
                for t in terms {
                    if let Some(mut gt) = self.take_slot(grads, *t) {
                        gt[0] += share;
                        grads[t.0] = Some(gt);
                    }
                }
            }
        }
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], var: Var, g: Option<Vec<T>>) {
    if g.is_some() {
        grads[var.0] = g;
    }
}
