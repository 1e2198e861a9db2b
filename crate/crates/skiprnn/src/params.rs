//! Named parameter storage shared across training steps.
//!
//! Parameters live outside any tape; each training step registers them as
//! leaves on a fresh tape and receives a [`Gradients`] map back.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stable handle for one trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor);
        self.names.push(name.into());
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (t, n))| (ParamId(i), n.as_str(), t))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient map produced by a backward pass: one accumulator per parameter.
/// Parameters the loss never touched have no entry and read as zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(g);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// L2 norm over every entry of every gradient.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.grads.iter().flatten() {
            for &x in g.data() {
                sq += x * x;
            }
        }
        sq.sqrt()
    }

    pub fn scale_all(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                g.check_finite(&format!("gradient of parameter {i}"))
                    .map_err(|e| Error::Numeric(format!("{e}")))?;
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
