//! Dense row-major tensors and the reverse-mode differentiation tape.

mod grad_check;
mod tape;

pub use grad_check::{finite_diff_grad, finite_diff_partial, max_rel_error, rel_error};
pub use tape::{Op, Tape, TensorId};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array, row-major with the last axis fastest.
///
/// The optional `grad` buffer always has the same length as `values`; it is
/// populated by [`Tape::backward`] for parameter tensors and accumulated
/// additively across records.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides (last axis stride 1).
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "zero-length axis".into(),
            });
        }
        let expected = element_count(&shape);
        if expected != values.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expects {} values, got {}", expected, values.len()),
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::ZERO)
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![v; element_count(shape)],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = element_count(shape);
        Self {
            shape: shape.to_vec(),
            values: (0..n).map(|i| f(i)).collect(),
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            values: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the grad buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: vec![g.len()],
            });
        }
        let grad = self.grad.get_or_insert_with(|| vec![T::ZERO; g.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += *src;
        }
        Ok(())
    }

    /// Scales the accumulated grad in place (used for 1/batch averaging).
    pub fn scale_grad(&mut self, s: T) {
        if let Some(g) = self.grad.as_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Simultaneous mutable values / shared grad access for optimizer steps.
    pub fn values_and_grad(&mut self) -> Option<(&mut [T], &[T])> {
        let Self { values, grad, .. } = self;
        grad.as_deref().map(|g| (values.as_mut_slice(), g))
    }

    /// Standard mixed-radix linear index of `coords`.
    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.shape.len());
        let mut idx = 0;
        for (c, d) in coords.iter().zip(&self.shape) {
            debug_assert!(c < d);
            idx = idx * d + c;
        }
        idx
    }

    /// Inverse of [`index_of`]; the pair round-trips.
    pub fn coords_of(&self, mut linear: usize) -> Vec<usize> {
        debug_assert!(linear < self.values.len());
        let mut coords = vec![0; self.shape.len()];
        for i in (0..self.shape.len()).rev() {
            coords[i] = linear % self.shape[i];
            linear /= self.shape[i];
        }
        coords
    }

    pub fn at(&self, coords: &[usize]) -> T {
        self.values[self.index_of(coords)]
    }

    pub fn set(&mut self, coords: &[usize], v: T) {
        let i = self.index_of(coords);
        self.values[i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Precision conversion; grads are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }
}
