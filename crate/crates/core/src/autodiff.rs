//! Tape-based reverse-mode automatic differentiation over tensors.
//!
//! Operations are appended to a [`Tape`] in execution order, so every node's
//! parents precede it. [`Tape::backward`] walks the tape in reverse and
//! accumulates adjoints, summing contributions over fan-out. Sign nodes
//! propagate the clipped straight-through pseudo-gradient
//! ([`ops::ste_backward`]) instead of their true, almost-everywhere-zero
//! derivative.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op<T> {
    /// Input value. Differentiable leaves receive an entry in the [`GradientSet`].
    Leaf { differentiable: bool },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MaxPool {
        input: NodeId,
        window: usize,
        stride: usize,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Sign(NodeId),
    HardTanh(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    /// Sum of all elements (scalar output).
    Sum(NodeId),
    /// One element by flat offset (scalar output).
    Select { input: NodeId, offset: usize },
    /// Mean softmax cross-entropy of N×G logits (scalar output).
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::Dense { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::MaxPool { input, .. }
            | Op::Select { input, .. }
            | Op::SoftmaxCrossEntropy { logits: input, .. } => vec![*input],
            Op::Relu(a) | Op::Sign(a) | Op::HardTanh(a) | Op::Reshape(a) | Op::Scale(a, _) | Op::Sum(a) => {
                vec![*a]
            }
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Dense { .. } => "dense",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Relu(_) => "relu",
            Op::Sign(_) => "sign",
            Op::HardTanh(_) => "hardtanh",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Select { .. } => "select",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    tracks_grad: bool,
}

/// Ordered record of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every differentiable leaf
/// reachable from it.
#[derive(Clone, Debug)]
pub struct GradientSet<T> {
    grads: BTreeMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(&leaf)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor<T>> {
        self.grads.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.grads.keys().copied()
    }
}

/// Adjoints of every node that lies on a path from a differentiable leaf to
/// the output. Used when an intermediate gradient is needed (e.g. GradCAM).
#[derive(Clone, Debug)]
pub struct Adjoints<T> {
    adjoints: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adjoints<T> {
    pub fn get(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.adjoints.get(node.0).and_then(Option::as_ref)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(grad),
        Some(acc) => {
            acc.expect_same_shape(&grad, "gradient accumulation")?;
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a += *g;
            }
        }
    }
    Ok(())
}

fn scalar_tensor<T: Scalar>(v: T) -> Tensor<T> {
    Tensor::full(vec![1], v).expect("[1] is a valid shape")
}

/// Softmax probabilities and mean cross-entropy, max-subtracted per row.
pub(crate) fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(Tensor<T>, T)> {
    let [n, g] = match *logits.shape() {
        [n, g] => [n, g],
        ref s => return Err(Error::shape("cross_entropy", "logits", format!("expected N×G, got {s:?}"))),
    };
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            "batch size",
            format!("{n} logit rows, {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= g) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {g} classes")));
    }
    let mut probs = Vec::with_capacity(n * g);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(g).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        total += z.ln() - (row[label] - m);
        probs.extend(exps.iter().map(|&e| e / z));
    }
    Ok((Tensor::new(vec![n, g], probs)?, total / T::of(n as f64)))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0].op
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("node {} is not on this tape", id.0)));
        }
        Ok(())
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        let tracks_grad = match op {
            Op::Leaf { differentiable } => differentiable,
            ref op => op.parents().iter().any(|p| self.nodes[p.0].tracks_grad),
        };
        self.nodes.push(Node { op, value, tracks_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf { differentiable: true }, value)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf { differentiable: false }, value)
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check(id)?;
        }
        let v = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            v,
        ))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check(id)?;
        }
        let v = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(Op::Dense { input, weight, bias }, v))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        self.check(input)?;
        let (v, argmax) = ops::maxpool2d(self.value(input), window, stride)?;
        Ok(self.push(
            Op::MaxPool {
                input,
                window,
                stride,
                argmax,
            },
            v,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let v = ops::relu(self.value(input));
        Ok(self.push(Op::Relu(input), v))
    }

    pub fn sign(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let v = ops::sign_binarize(self.value(input));
        Ok(self.push(Op::Sign(input), v))
    }

    pub fn hardtanh(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let v = ops::hardtanh(self.value(input));
        Ok(self.push(Op::HardTanh(input), v))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check(input)?;
        let v = self.value(input).reshape(shape)?;
        Ok(self.push(Op::Reshape(input), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, input: NodeId, k: T) -> Result<NodeId> {
        self.check(input)?;
        let v = self.value(input).scale(k);
        Ok(self.push(Op::Scale(input, k), v))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let v = scalar_tensor(self.value(input).sum());
        Ok(self.push(Op::Sum(input), v))
    }

    pub fn select(&mut self, input: NodeId, offset: usize) -> Result<NodeId> {
        self.check(input)?;
        let src = self.value(input);
        let x = *src.data().get(offset).ok_or_else(|| {
            Error::InvalidArgument(format!("select offset {offset} out of range for {:?}", src.shape()))
        })?;
        Ok(self.push(Op::Select { input, offset }, scalar_tensor(x)))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let (probs, loss) = softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            scalar_tensor(loss),
        ))
    }

    /// Recompute every node from the leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut vals: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |id: NodeId| &vals[id.0];
            let out = match &node.op {
                Op::Leaf { .. } => node.value.clone(),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => ops::conv2d(v(*input), v(*weight), v(*bias), *stride, *padding)?,
                Op::Dense { input, weight, bias } => ops::dense(v(*input), v(*weight), v(*bias))?,
                Op::MaxPool { input, window, stride, .. } => ops::maxpool2d(v(*input), *window, *stride)?.0,
                Op::Relu(a) => ops::relu(v(*a)),
                Op::Sign(a) => ops::sign_binarize(v(*a)),
                Op::HardTanh(a) => ops::hardtanh(v(*a)),
                Op::Reshape(a) => v(*a).reshape(node.value.shape().to_vec())?,
                Op::Add(a, b) => v(*a).add(v(*b))?,
                Op::Mul(a, b) => v(*a).zip_map(v(*b), "mul", |x, y| x * y)?,
                Op::Scale(a, k) => v(*a).scale(*k),
                Op::Sum(a) => scalar_tensor(v(*a).sum()),
                Op::Select { input, offset } => scalar_tensor(v(*input).data()[*offset]),
                Op::SoftmaxCrossEntropy { logits, labels, .. } => scalar_tensor(softmax_cross_entropy(v(*logits), labels)?.1),
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// Adjoints of all gradient-tracking nodes with respect to `output`.
    pub fn adjoints(&self, output: NodeId) -> Result<Adjoints<T>> {
        self.check(output)?;
        if self.value(output).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        let seed_shape = self.value(output).shape().to_vec();
        adj[output.0] = Some(Tensor::full(seed_shape, T::one())?);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracks_grad {
                continue;
            }
            let Some(up) = adj[i].take() else { continue };
            let wants = |id: NodeId| self.nodes[id.0].tracks_grad;
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let want = [wants(*input), wants(*weight), wants(*bias)];
                    let g = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        self.value(*bias),
                        *stride,
                        *padding,
                        &up,
                        want,
                    )?;
                    for (id, grad) in [(*input, g.input), (*weight, g.weight), (*bias, g.bias)] {
                        if let Some(grad) = grad {
                            accumulate(&mut adj[id.0], grad)?;
                        }
                    }
                }
                Op::Dense { input, weight, bias } => {
                    let want = [wants(*input), wants(*weight), wants(*bias)];
                    let g = ops::dense_backward(self.value(*input), self.value(*weight), self.value(*bias), &up, want)?;
                    for (id, grad) in [(*input, g.input), (*weight, g.weight), (*bias, g.bias)] {
                        if let Some(grad) = grad {
                            accumulate(&mut adj[id.0], grad)?;
                        }
                    }
                }
                Op::MaxPool { input, argmax, .. } => {
                    let g = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &up)?;
                    accumulate(&mut adj[input.0], g)?;
                }
                Op::Relu(a) => {
                    let g = ops::relu_backward(self.value(*a), &up)?;
                    accumulate(&mut adj[a.0], g)?;
                }
                Op::Sign(a) => {
                    let g = ops::ste_backward(self.value(*a), &up)?;
                    accumulate(&mut adj[a.0], g)?;
                }
                Op::HardTanh(a) => {
                    let g = ops::hardtanh_backward(self.value(*a), &up)?;
                    accumulate(&mut adj[a.0], g)?;
                }
                Op::Reshape(a) => {
                    let g = up.reshape(self.value(*a).shape().to_vec())?;
                    accumulate(&mut adj[a.0], g)?;
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut adj[a.0], up.clone())?;
                    }
                    if wants(*b) {
                        accumulate(&mut adj[b.0], up.clone())?;
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        let g = up.zip_map(self.value(*b), "mul backward", |u, y| u * y)?;
                        accumulate(&mut adj[a.0], g)?;
                    }
                    if wants(*b) {
                        let g = up.zip_map(self.value(*a), "mul backward", |u, x| u * x)?;
                        accumulate(&mut adj[b.0], g)?;
                    }
                }
                Op::Scale(a, k) => {
                    accumulate(&mut adj[a.0], up.scale(*k))?;
                }
                Op::Sum(a) => {
                    let u = up.data()[0];
                    accumulate(&mut adj[a.0], Tensor::full(self.value(*a).shape().to_vec(), u)?)?;
                }
                Op::Select { input, offset } => {
                    let mut g = Tensor::zeros(self.value(*input).shape().to_vec())?;
                    g.data_mut()[*offset] = up.data()[0];
                    accumulate(&mut adj[input.0], g)?;
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let u = up.data()[0];
                    let g_cols = probs.shape()[1];
                    let n = T::of(labels.len() as f64);
                    let mut g = probs.clone();
                    for (row, &label) in g.data_mut().chunks_exact_mut(g_cols).zip(labels) {
                        row[label] -= T::one();
                        for v in row.iter_mut() {
                            *v = *v * u / n;
                        }
                    }
                    accumulate(&mut adj[logits.0], g)?;
                }
            }
            adj[i] = Some(up);
        }
        Ok(Adjoints { adjoints: adj })
    }

    /// Gradients of the scalar `output` for each differentiable leaf it depends on.
    pub fn backward(&self, output: NodeId) -> Result<GradientSet<T>> {
        let reach = self.reachable(output)?;
        let mut adj = self.adjoints(output)?;
        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if reach[i] && matches!(node.op, Op::Leaf { differentiable: true }) {
                let g = match adj.adjoints[i].take() {
                    Some(g) => g,
                    None => Tensor::zeros(node.value.shape().to_vec())?,
                };
                grads.insert(NodeId(i), g);
            }
        }
        Ok(GradientSet { grads })
    }

    fn reachable(&self, output: NodeId) -> Result<Vec<bool>> {
        self.check(output)?;
        let mut reach = vec![false; output.0 + 1];
        reach[output.0] = true;
        for i in (0..=output.0).rev() {
            if reach[i] {
                for p in self.nodes[i].op.parents() {
                    reach[p.0] = true;
                }
            }
        }
        Ok(reach)
    }
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: T) -> Result<Tensor<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (h + h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2, 3], &[1., -2., 3., 0.5, 0., 9.]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dense_gradient_is_weight_row() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 3], &[0.3, -1.0, 2.0]));
        let w = tape.constant(t(&[3, 2], &[1., 4., 2., 5., 3., 6.]));
        let b = tape.constant(t(&[2], &[0., 0.]));
        let y = tape.dense(x, w, b).unwrap();
        let out = tape.select(y, 1).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[1., 2.]));
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap();
        let s = tape.sum(z).unwrap();
        // s = 2 Σ x², ds/dx = 4x
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[1., 2.]));
        let y = tape.relu(x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn unreachable_leaves_are_omitted() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1], &[1.]));
        let _unused = tape.variable(t(&[1], &[2.]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.leaves().collect::<Vec<_>>(), vec![x]);
    }

    #[test]
    fn sign_uses_straight_through() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[4], &[0.5, 1.5, 1.0, -0.2]));
        let s = tape.sign(x).unwrap();
        let k = tape.constant(t(&[4], &[2., 1., 3., 5.]));
        let y = tape.mul(s, k).unwrap();
        let out = tape.sum(y).unwrap();
        assert_eq!(tape.backward(out).unwrap().get(x).unwrap().data(), &[2.0, 0.0, 3.0, 5.0]);
    }

    #[test]
    fn finite_diff_examples() {
        let x = t(&[3], &[0.1, -4.0, 7.0]);
        let g = finite_diff_gradient(|v: &Tensor<f64>| v.sum(), &x, 0.25).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let x = t(&[1], &[3.0]);
        let g = finite_diff_gradient(|v: &Tensor<f64>| v.data()[0] * v.data()[0], &x, 1e-3).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-4);

        assert!(finite_diff_gradient(|v: &Tensor<f64>| v.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn replay_reproduces_values() {
        let mut rng = SplitMix64::new(3);
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::uniform(vec![1, 2, 6, 6], -1.0, 1.0, &mut rng).unwrap());
        let w = tape.constant(Tensor::uniform(vec![3, 2, 3, 3], -1.0, 1.0, &mut rng).unwrap());
        let b = tape.constant(Tensor::uniform(vec![3], -1.0, 1.0, &mut rng).unwrap());
        let c = tape.conv2d(x, w, b, 1, 1).unwrap();
        let s = tape.sign(c).unwrap();
        let p = tape.maxpool2d(s, 2, 2).unwrap();
        let f = tape.reshape(p, vec![1, 27]).unwrap();
        let _ = tape.softmax_cross_entropy(f, &[4]).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(NodeId(i)), "node {i}");
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let z = tape.variable(t(&[1, 3], &[0., 0., 0.]));
        let l = tape.softmax_cross_entropy(z, &[2]).unwrap();
        assert!((tape.value(l).data()[0] - 3f64.ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        let g = g.get(z).unwrap().data();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g[2] + 2.0 / 3.0).abs() < 1e-12);
    }
}
