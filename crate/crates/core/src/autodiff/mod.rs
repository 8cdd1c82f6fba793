//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and whatever it needs for the backward pass. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! depends on a differentiable leaf. Graphs are cheap to build and are
//! rebuilt for every forward pass; model parameters live outside the graph
//! and enter it as leaves.

mod basic;
pub(crate) mod kernels;
mod nn;

use thiserror::Error;

use crate::error::ShapeError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use nn::{BatchStats, Padding, BCE_CLAMP};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward requires a single-element output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
}

pub fn invalid_arg(op: &'static str, detail: impl Into<String>) -> GraphError {
    GraphError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean(Var, Option<usize>),
    Sum(Var),
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv2d {
        x: Var,
        k: Var,
        pad: (usize, usize),
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Bce {
        pred: Var,
        targets: Vec<T>,
        clamped: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse pass from a single-element output. Previous gradients are
    /// discarded.
    pub fn backward(&mut self, output: Var) -> Result<(), GraphError> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(GraphError::NonScalarLoss(out.shape().to_vec()));
        }
        let v = out.data()[0];
        if !v.is_finite() {
            return Err(GraphError::NonFiniteLoss(v.to_f64_lossy()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(Tensor::ones(out.shape().to_vec()));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            for (parent, contribution) in self.backprop(i, &g) {
                self.accumulate(parent, contribution);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(..)
            | Op::Sub(..)
            | Op::Mul(..)
            | Op::Scale(..)
            | Op::MatMul(..)
            | Op::Reshape(..)
            | Op::Permute(..)
            | Op::Concat(..)
            | Op::Slice { .. }
            | Op::Mean(..)
            | Op::Sum(..)
            | Op::Max { .. } => self.backprop_basic(node, g),
            _ => self.backprop_nn(node, g),
        }
    }
}
