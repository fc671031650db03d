//! Named trainable parameters with seed-addressed initialization.
//!
//! Each parameter draws its initial values from a stream keyed by the model
//! seed and the parameter's name, so initialization does not depend on the
//! order in which modules are constructed.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) truncated to +-2 std.
    TruncNormal { std: f64 },
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanInUniform { fan_in: usize },
}

impl Init {
    fn sample(self, seed: u64, name: &str, len: usize) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::TruncNormal { std } => {
                let mut rng = rng_for(seed, name, &[]);
                let normal = Normal::new(0.0, std).expect("std is positive");
                (0..len)
                    .map(|_| loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= 2.0 * std {
                            break v;
                        }
                    })
                    .collect()
            }
            Init::FanInUniform { fan_in } => {
                let mut rng = rng_for(seed, name, &[]);
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..len).map(|_| rng.random_range(-bound..bound)).collect()
            }
        }
    }
}

/// Ordered collection of every trainable tensor in a model.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Registers a new parameter and returns a handle sharing its storage.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let len = shape.iter().product();
        let values = init.sample(self.seed, name, len);
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place; every module handle observes the change.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Value(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, value has {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        Ok(())
    }

    /// Copies every parameter value from `other`, which must hold the same inventory.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if self.vars.len() != other.vars.len() {
            return Err(Error::Value(format!(
                "parameter inventories differ: {} vs {} tensors",
                self.vars.len(),
                other.vars.len()
            )));
        }
        for (name, var) in &other.vars {
            self.assign(name, var.as_tensor())?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.vars.len())
            .field("scalars", &self.num_scalars())
            .field("dtype", &self.dtype)
            .finish()
    }
}

/// Name prefix helper for building nested modules.
#[derive(Debug, Clone)]
pub struct Path(String);

impl Path {
    pub fn root(name: &str) -> Self {
        Path(name.to_string())
    }

    pub fn join(&self, child: impl std::fmt::Display) -> Self {
        if self.0.is_empty() {
            Path(child.to_string())
        } else {
            Path(format!("{}.{child}", self.0))
        }
    }

    pub fn param(&self, leaf: &str) -> String {
        self.join(leaf).0
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}
