//! Adam with bias correction.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, var) in params.iter() {
            let zeros = var.as_tensor().zeros_like()?;
            moments.insert(name.to_string(), (zeros.clone(), zeros));
        }
        Ok(Self {
            config,
            steps: 0,
            moments,
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> &BTreeMap<String, (Tensor, Tensor)> {
        &self.moments
    }

    pub(crate) fn restore(config: AdamConfig, steps: u64, moments: BTreeMap<String, (Tensor, Tensor)>) -> Self {
        Self {
            config,
            steps,
            moments,
        }
    }

    /// One update of every parameter. Parameters absent from `grads` are
    /// treated as having zero gradient.
    ///
    /// Uses the step-size form `lr * sqrt(1 - b2^t) / (1 - b1^t)` applied to
    /// `m / (sqrt(v) + eps)`.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64, clip_norm: Option<f64>) -> Result<()> {
        let scale = match clip_norm {
            Some(max) => {
                let norm = global_grad_norm(params, grads)?;
                if norm > max && norm > 0.0 {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let step_size = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        for (name, var) in params.iter() {
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::Value(format!("optimizer has no moments for `{name}`")))?;
            let Some(g) = grads.get(var.as_tensor()) else {
                // zero gradient: moments decay, parameter moves by the decayed momentum
                *m = (&*m * beta1)?;
                *v = (&*v * beta2)?;
                let update = (m.broadcast_div(&(v.sqrt()? + epsilon)?)? * step_size)?;
                var.set(&(var.as_tensor() - update)?)?;
                continue;
            };
            // some grads of variables still carry op history; keeping them in
            // the moments would pin every step's forward graph
            let g = g.detach();
            let g = if scale != 1.0 { (g * scale)? } else { g };
            *m = ((&*m * beta1)? + (&g * (1.0 - beta1))?)?;
            *v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let update = (m.broadcast_div(&(v.sqrt()? + epsilon)?)? * step_size)?;
            var.set(&(var.as_tensor() - update)?)?;
        }
        Ok(())
    }
}

pub fn global_grad_norm(params: &ParamStore, grads: &GradStore) -> Result<f64> {
    let mut total = 0f64;
    for (_, var) in params.iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            total += g.to_dtype(candle_core::DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}
