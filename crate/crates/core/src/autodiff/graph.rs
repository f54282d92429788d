//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{ensure_same_shape, Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type UnaryFn<T> = fn(T) -> T;

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    Relu(Var),
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Upsample2(Var),
    Concat { a: Var, b: Var },
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Square(Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    /// Elementwise map with a caller-supplied derivative.
    Map { input: Var, derivative: UnaryFn<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => vec![input, weight, bias],
            Op::Relu(x)
            | Op::Upsample2(x)
            | Op::Sigmoid(x)
            | Op::Square(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::MaxPool2 { input: x, .. }
            | Op::Map { input: x, .. } => vec![x],
            Op::Concat { a, b } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Recording,
    Differentiated,
}

/// A single forward/backward computation. All tensors on one graph share
/// the element type `T`.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    phase: Phase,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            phase: Phase::Recording,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_vec(self.shape(v), g.clone()).expect("grad shape"))
    }

    /// Clears gradients so that backward may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.phase = Phase::Recording;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        Ok(self.derived(y, Op::Conv2d { input, weight, bias, stride, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.map_values(x, |v| v.max(T::zero()));
        self.derived(y, Op::Relu(x))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::maxpool2(self.value(x))?;
        Ok(self.derived(y, Op::MaxPool2 { input: x, argmax }))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let y = ops::upsample2(self.value(x));
        self.derived(y, Op::Upsample2(x))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.derived(y, Op::Concat { a, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.map_values(x, ops::sigmoid);
        self.derived(y, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_values("add", a, b, |x, y| x + y)?;
        Ok(self.derived(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_values("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_values("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(y, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_values("div", a, b, |x, y| x / y)?;
        Ok(self.derived(y, Op::Div(a, b)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.map_values(x, |v| v * v);
        self.derived(y, Op::Square(x))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.map_values(x, |v| v * factor);
        self.derived(y, Op::Scale(x, factor))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let y = self.map_values(x, |v| v + c);
        self.derived(y, Op::AddScalar(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        self.derived(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel()).expect("count");
        let mut s = T::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        self.derived(Tensor::scalar(s / n), Op::Mean(x))
    }

    /// Elementwise `f` whose derivative is supplied by the caller.
    pub fn map(&mut self, x: Var, f: UnaryFn<T>, derivative: UnaryFn<T>) -> Var {
        let y = self.map_values(x, f);
        self.derived(y, Op::Map { input: x, derivative })
    }

    fn map_values(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let src = self.value(x);
        Tensor::from_vec(src.shape(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    fn zip_values(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure_same_shape(op, ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    /// Propagates `d loss / d node` to every gradient-carrying node reachable
    /// from `loss`. Leaf gradients stay readable through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.phase == Phase::Differentiated {
            return Err(Error::State(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {shape:?}")));
        }
        self.phase = Phase::Differentiated;
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Interior gradients are released once consumed.
            let Some(g) = self.grads[i].take() else { continue };
            let g = Tensor::from_vec(self.nodes[i].value.shape(), g)?;
            for (input, grad) in self.local_grads(i, g)? {
                if self.nodes[input.0].requires_grad {
                    self.accumulate(input, grad);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
            slot => *slot = Some(g.into_vec()),
        }
    }

    fn local_grads(&self, i: usize, g: Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let elementwise = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            let (xv, yv) = (self.value(x).data(), node.value.data());
            let data = g
                .data()
                .iter()
                .zip(xv)
                .zip(yv)
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect();
            Tensor::from_vec(g.shape(), data).expect("same shape")
        };
        Ok(match node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let grads = ops::conv2d_backward(self.value(input), self.value(weight), &g, stride, pad)?;
                let bias_shape = self.shape(bias);
                vec![
                    (input, grads.input),
                    (weight, grads.weight),
                    (bias, Tensor::from_vec(bias_shape, grads.bias.into_vec())?),
                ]
            }
            Op::Relu(x) => vec![(x, elementwise(x, &|gi, xi, _| if xi > T::zero() { gi } else { T::zero() }))],
            Op::MaxPool2 { input, ref argmax } => {
                vec![(input, ops::maxpool2_backward(self.shape(input), argmax, &g))]
            }
            Op::Upsample2(x) => vec![(x, ops::upsample2_backward(self.shape(x), &g))],
            Op::Concat { a, b } => {
                let (ga, gb) = ops::split_channels(&g, self.shape(a).c());
                vec![(a, ga), (b, gb)]
            }
            // σ(x)·σ(−x) keeps a nonzero slope where y rounds to exactly 1.
            Op::Sigmoid(x) => vec![(x, elementwise(x, &|gi, xi, yi| gi * yi * ops::sigmoid(-xi)))],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g)],
            Op::Sub(a, b) => {
                let neg = Tensor::from_vec(g.shape(), g.data().iter().map(|&v| -v).collect())?;
                vec![(a, g), (b, neg)]
            }
            Op::Mul(a, b) => vec![
                (a, elementwise(b, &|gi, bi, _| gi * bi)),
                (b, elementwise(a, &|gi, ai, _| gi * ai)),
            ],
            Op::Div(a, b) => vec![
                (a, elementwise(b, &|gi, bi, _| gi / bi)),
                // d(a/b)/db = -(a/b)/b = -y/b
                (b, elementwise(b, &|gi, bi, yi| -gi * yi / bi)),
            ],
            Op::Square(x) => {
                let two = T::one() + T::one();
                vec![(x, elementwise(x, &|gi, xi, _| gi * two * xi))]
            }
            Op::Scale(x, factor) => vec![(x, elementwise(x, &|gi, _, _| gi * factor))],
            Op::AddScalar(x) => vec![(x, g)],
            Op::Sum(x) => {
                let gi = g.data()[0];
                vec![(x, Tensor::full(self.shape(x), gi))]
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.shape(x).numel()).expect("count");
                vec![(x, Tensor::full(self.shape(x), g.data()[0] / n))]
            }
            Op::Map { input, derivative } => {
                vec![(input, elementwise(input, &|gi, xi, _| gi * derivative(xi)))]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([1, 1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn reused_value_accumulates() {
        let mut g = Graph::<f64>::new();
        let y = g.param(Tensor::scalar(3.0));
        let z = g.add(y, y).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn second_backward_is_rejected_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([1, 1, 2, 2]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([1, 1, 2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_forward_and_dead_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full([1, 1, 2, 2], -0.5));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data(), &[0.5]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn sum_and_mean() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([2, 1, 3, 3]));
        let s = g.sum(x);
        assert_eq!(g.value(s).data(), &[18.0]);
        let m = g.mean(x);
        g.backward(m).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0 / 18.0));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[5.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn binary_ops_require_equal_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let b = g.constant(Tensor::zeros([1, 1, 2, 3]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    }
}
