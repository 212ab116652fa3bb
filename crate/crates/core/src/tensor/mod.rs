//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Everything downstream (the network, the trainer, the dreamer) computes in
//! 64-bit floats on [`Tensor`] values. A [`Tape`] records the primitive
//! operations of one forward pass; [`Tape::backward`] replays them in exact
//! reverse order and returns gradients for every leaf that asked for them.

mod kernels;
mod tape;

pub use tape::{BatchStats, Gradients, Tape, Var};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: every dimension must be at least 1")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("expected a scalar tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    BadRank { expected: usize, shape: Vec<usize> },
    #[error("input length {input} is shorter than kernel length {kernel}")]
    InputShorterThanKernel { input: usize, kernel: usize },
    #[error("batch normalization needs at least 2 values per channel, got {count}")]
    DegenerateBatch { count: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected {expected} labels for a batch of {expected}, got {got}")]
    LabelCountMismatch { expected: usize, got: usize },
}

/// Dense n-dimensional array of f64 values in row-major order.
///
/// Tensors are immutable once constructed; operations return new values.
/// Cloning is cheap (the buffer is shared).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self, TensorError> {
        let numel = checked_numel(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![fill; numel]),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, 0.0)
    }

    /// Wraps an existing buffer; `data.len()` must equal the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let numel = checked_numel(shape)?;
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The sole element of a single-element tensor.
    ///
    /// Panics if the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel = checked_numel(shape)?;
        if numel != self.numel() {
            return Err(TensorError::LengthMismatch {
                len: self.numel(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Elementwise `self * factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v * factor).collect()),
        }
    }

    /// `self + coeff * other`, used by the optimizer. Panics on shape mismatch.
    pub fn add_scaled(&self, coeff: f64, other: &Tensor) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "add_scaled shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + coeff * b)
            .collect();
        Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    /// Bit-level equality (distinguishes -0.0 from 0.0, NaN from NaN).
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorError::InvalidShape {
            shape: shape.to_vec(),
        })
}
