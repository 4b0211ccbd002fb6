use crate::tensor::Tensor;
use crate::{AdError, Result};
use std::collections::HashMap;

/// One named trainable tensor plus its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }
}

/// Named parameter registry. Registration order is the canonical iteration
/// order, which keeps optimizer sweeps and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(AdError::DuplicateParam(name.to_string()));
        }
        self.by_name.insert(name.to_string(), self.params.len());
        self.names.push(name.to_string());
        self.params.push(Param::new(value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index_of(name)
            .map(|i| &self.params[i])
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        let i = self
            .index_of(name)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))?;
        Ok(&mut self.params[i])
    }

    pub fn value_at(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn grad_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].grad
    }

    /// Names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter_mut())
    }

    /// Zero every gradient accumulator. Called once per optimization step;
    /// gradients are never retained implicitly.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}
