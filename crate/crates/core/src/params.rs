//! Named access to learnable tensors, shared by the optimizer and checkpoints.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub trait Parameterized {
    /// Learnable tensors in a stable order with checkpoint names.
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces values in `named_params` order; shapes must match.
    fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.named_params_mut();
        if slots.len() != values.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for ((name, slot), v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::config(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    name,
                    slot.shape(),
                    v.shape()
                )));
            }
            **slot = v.clone();
        }
        Ok(())
    }

    fn params(&self) -> Vec<Tensor> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect()
    }
}
