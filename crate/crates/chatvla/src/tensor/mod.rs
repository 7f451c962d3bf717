//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are rank-1 or rank-2, row-major, always f64. Every operation
//! produces a fresh tensor; when any input has `requires_grad`, the output
//! records the producing operation so [`Tensor::backward`] can propagate
//! gradients back to the leaves. Leaves accumulate gradients (`+=`) across
//! backward calls until [`Tensor::zero_grad`] / [`Tensor::clear_grad`].
//!
//! Broadcasting is deliberately limited to trailing-axis bias addition
//! ([`Tensor::add_bias`]); all other binary ops require exact shape equality
//! so that shape bugs fail loudly.
//!
//! GELU uses the tanh approximation, and that exact formula is what the
//! finite-difference oracle in [`finite_diff_check`] verifies against.

mod op;

pub mod finite_diff;

pub use finite_diff::finite_diff_check;
pub use op::Op;

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use thiserror::Error;

/// Errors produced by tensor construction, forward ops, and backward.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: index {index} out of bounds for size {size}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("finite-difference check: eps {eps} outside (0, 1e-2]")]
    InvalidEps { eps: f64 },
    #[error("finite-difference check hit a non-finite value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("{op}: operation only valid on leaf tensors")]
    NotALeaf { op: &'static str },
}

pub(crate) struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// Handle to a node in the compute graph. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn validate_shape(op: &'static str, shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "rank must be 1 or 2".into(),
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn make(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        validate_shape("from_vec", shape)?;
        if numel_of(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: format!("shape implies {} elements, got {}", numel_of(shape), data.len()),
            });
        }
        Ok(Tensor::make(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Trainable leaf (`requires_grad = true`).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        validate_shape("param", shape)?;
        if numel_of(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                op: "param",
                shape: shape.to_vec(),
                reason: format!("shape implies {} elements, got {}", numel_of(shape), data.len()),
            });
        }
        Ok(Tensor::make(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor, TensorError> {
        Tensor::from_vec(shape, vec![0.0; numel_of(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor, TensorError> {
        Tensor::from_vec(shape, vec![value; numel_of(shape)])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::make(vec![1], vec![value], false, Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    /// Number of rows when viewed as a matrix (1 for rank-1 tensors).
    pub fn rows(&self) -> usize {
        if self.node.shape.len() == 2 {
            self.node.shape[0]
        } else {
            1
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.node.shape.last().expect("non-empty shape")
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.data.borrow()[0]
    }

    /// Current accumulated gradient, if any backward reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    /// Reset the gradient buffer to all-zero entries (keeps it allocated).
    pub fn zero_grad(&self) {
        let mut g = self.node.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => buf.iter_mut().for_each(|v| *v = 0.0),
            None => *g = Some(vec![0.0; self.numel()]),
        }
    }

    /// Drop the gradient buffer entirely (reads back as absent).
    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Replace the values of a leaf tensor in place. The optimizer and the
    /// finite-difference oracle use this; graph nodes reject it.
    pub fn set_data(&self, data: Vec<f64>) -> Result<(), TensorError> {
        if !matches!(self.node.op, Op::Leaf) {
            return Err(TensorError::NotALeaf { op: "set_data" });
        }
        if data.len() != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "set_data",
                shape: self.node.shape.clone(),
                reason: format!("expected {} elements, got {}", self.numel(), data.len()),
            });
        }
        *self.node.data.borrow_mut() = data;
        Ok(())
    }

    /// Mutate leaf values in place through a closure.
    pub fn update_data<F: FnOnce(&mut [f64])>(&self, f: F) -> Result<(), TensorError> {
        if !matches!(self.node.op, Op::Leaf) {
            return Err(TensorError::NotALeaf { op: "update_data" });
        }
        f(&mut self.node.data.borrow_mut());
        Ok(())
    }

    /// True when two handles point at the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    /// Composite: sum of all entries as a scalar, built from suite ops
    /// (reshape + matmul against ones).
    pub fn sum_all(&self) -> Result<Tensor, TensorError> {
        let n = self.numel();
        let row = self.reshape(&[1, n])?;
        let ones = Tensor::full(&[n, 1], 1.0)?;
        row.matmul(&ones)
    }

    /// Composite: arithmetic mean of all entries as a scalar.
    pub fn mean_all(&self) -> Result<Tensor, TensorError> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }
}

/// Gaussian-initialized leaf parameter, deterministic for a given rng.
pub fn randn_param<R: rand::Rng>(
    shape: &[usize],
    std: f64,
    rng: &mut R,
) -> Result<Tensor, TensorError> {
    use rand_distr::{Distribution, StandardNormal};
    let n = numel_of(shape);
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::param(shape, data)
}

#[cfg(test)]
mod tests;
