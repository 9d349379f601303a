//! SGD with momentum and per-step learning-rate decay.
//!
//! The schedule is lr_t = base_lr / (1 + decay·t) with t counting completed
//! optimizer steps from 0, the dominant convention for a bare "decay" value
//! paired with SGD. The update is the classical heavy-ball recurrence
//! v ← momentum·v − lr_t·g, w ← w + v.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct SgdState<T> {
    base_lr: f64,
    momentum: f64,
    decay: f64,
    iteration: u64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(base_lr: f64, momentum: f64, decay: f64) -> Self {
        Self {
            base_lr,
            momentum,
            decay,
            iteration: 0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Learning rate the next `step` call will use.
    pub fn current_lr(&self) -> f64 {
        self.base_lr / (1.0 + self.decay * self.iteration as f64)
    }

    /// Applies one update to every parameter, consuming the gradients
    /// accumulated on the tensors. Velocities start at zero and mirror the
    /// parameter shapes.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    ) -> Result<()> {
        let lr = T::from_f64(self.current_lr());
        let momentum = T::from_f64(self.momentum);
        for (name, param) in params {
            let len = param.len();
            let velocity = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![T::ZERO; len]);
            if velocity.len() != len {
                return Err(Error::ShapeMismatch {
                    left: vec![velocity.len()],
                    right: vec![len],
                });
            }
            let (values, grad) = param.values_and_grad().ok_or_else(|| {
                Error::Training(format!("parameter {name} has no accumulated gradient"))
            })?;
            for ((w, v), &g) in values.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                *v = momentum * *v - lr * g;
                *w += *v;
            }
            param.clear_grad();
        }
        self.iteration += 1;
        Ok(())
    }
}
