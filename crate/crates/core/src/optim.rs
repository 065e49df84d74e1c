//! Adam with per-name learning-rate groups.

use std::collections::HashMap;

use crate::autodiff::{Gradients, ParamId, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// `(name prefix, lr)`; the first matching prefix wins.
    pub groups: Vec<(String, f64)>,
    step: u64,
    state: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            groups: Vec::new(),
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn with_group(mut self, prefix: impl Into<String>, lr: f64) -> Self {
        self.groups.push((prefix.into(), lr));
        self
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        self.groups
            .iter()
            .find(|(p, _)| name.starts_with(p.as_str()))
            .map_or(self.lr, |(_, lr)| *lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor)>, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, param) in params {
            let Some(id) = param.param_id() else {
                return Err(Error::config(format!("{} is not a parameter", name)));
            };
            let Some(g) = grads.get(id) else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", name)));
            }
            let lr = self.lr_for(&name);
            let (m, v) = self
                .state
                .entry(id)
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            let mut values = param.to_vec();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                values[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            *param = param.with_values(values)?;
        }
        Ok(())
    }
}
