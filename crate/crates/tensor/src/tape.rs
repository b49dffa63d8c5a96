//! Reverse-mode differentiation over a linear record of primitive applications.
//!
//! Every op appends one node holding its forward value plus whatever it needs
//! for the backward pass. `backward` walks the record in reverse and
//! accumulates vector-Jacobian products into the inputs. Node ids grow
//! monotonically, so the record is already in topological order.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddSuffix(Var, Var),
    MulSuffix(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    ExpandLeading(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ops::conv::ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Resample {
        x: Var,
        plan: Arc<ops::resample::ResamplePlan<T>>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

pub(crate) struct Node<T: Real> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Recording of one forward evaluation.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. Gradients are kept for it when `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad,
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            false,
            Op::Leaf,
        )
    }

    pub fn variable(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            true,
            Op::Leaf,
        )
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.push(shape, value, false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", root.shape),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut sink = GradSink { tape: self, grads };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sink.add(*a, gout);
                sink.add(*b, gout);
            }
            Op::Sub(a, b) => {
                sink.add(*a, gout);
                sink.with(*b, |g| {
                    g.iter_mut().zip(gout).for_each(|(g, &d)| *g -= d)
                });
            }
            Op::Mul(a, b) => ops::elementwise::mul_backward(&mut sink, *a, *b, gout),
            Op::AddSuffix(x, y) => ops::elementwise::add_suffix_backward(&mut sink, *x, *y, gout),
            Op::MulSuffix(x, y) => ops::elementwise::mul_suffix_backward(&mut sink, *x, *y, gout),
            Op::Scale(x, s) => sink.with(*x, |g| {
                g.iter_mut().zip(gout).for_each(|(g, &d)| *g += d * *s)
            }),
            Op::Sum(x) => sink.with(*x, |g| g.iter_mut().for_each(|g| *g += gout[0])),
            Op::Relu(x) => {
                let xv = self.value(*x);
                sink.with(*x, |g| {
                    for ((g, &d), &xi) in g.iter_mut().zip(gout).zip(xv) {
                        if xi > T::zero() {
                            *g += d;
                        }
                    }
                })
            }
            Op::Reshape(x) => sink.add(*x, gout),
            Op::Permute(x, axes) => ops::shape::permute_backward(&mut sink, *x, axes, gout),
            Op::ExpandLeading(x) => ops::shape::expand_backward(&mut sink, *x, gout),
            Op::Concat { inputs, axis } => {
                ops::shape::concat_backward(&mut sink, inputs, *axis, &node.shape, gout)
            }
            Op::MatMul { a, b, ta, tb } => {
                ops::linalg::matmul_backward(&mut sink, *a, *b, *ta, *tb, &node.shape, gout)
            }
            Op::Conv2d { x, w, b, geom } => ops::conv::conv2d_backward(&mut sink, *x, *w, *b, geom, gout),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => ops::norm::batch_norm_backward(
                &mut sink, *x, *gamma, *beta, xhat, inv_std, *train, gout,
            ),
            Op::LayerNorm { x, xhat, inv_std } => {
                ops::norm::layer_norm_backward(&mut sink, *x, xhat, inv_std, gout)
            }
            Op::Softmax { x, axis } => {
                ops::softmax::softmax_backward(&mut sink, *x, *axis, &node.shape, &node.value, gout)
            }
            Op::Resample { x, plan } => ops::resample::resample_backward(&mut sink, *x, plan, gout),
            Op::Mse { pred, target } => ops::loss::mse_backward(&mut sink, *pred, *target, gout),
        }
    }
}

/// Accumulates gradients into the inputs of the node being differentiated.
pub(crate) struct GradSink<'a, T: Real> {
    pub(crate) tape: &'a Tape<T>,
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> GradSink<'_, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.tape.nodes[v.0].requires_grad
    }

    /// Run `f` on the gradient buffer of `v`, creating it zero-filled if needed.
    pub(crate) fn with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let len = self.tape.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    pub(crate) fn add(&mut self, v: Var, delta: &[T]) {
        self.with(v, |g| g.iter_mut().zip(delta).for_each(|(g, &d)| *g += d));
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
