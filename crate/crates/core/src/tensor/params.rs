use std::cell::RefCell;
use std::collections::HashMap;

use super::graph::Var;
use super::{Tensor, TensorError};

/// A named trainable tensor with its decoupled weight-decay coefficient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub weight_decay: f64,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, weight_decay: f64) -> Result<usize, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            weight_decay,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.id(name).map(|i| &mut self.params[i])
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count of parameters whose names start with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(TensorError::TensorShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Per-forward-pass view of a [`ParamStore`] that hands out graph leaves.
///
/// Each parameter maps to one leaf no matter how often it is requested, so
/// gradients from every use accumulate in the same slot.
pub struct Bindings<'a> {
    store: &'a ParamStore,
    track: bool,
    leaves: RefCell<Vec<Option<Var>>>,
}

impl<'a> Bindings<'a> {
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Bindings {
            store,
            track,
            leaves: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn var(&self, name: &str) -> Result<Var, TensorError> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let mut leaves = self.leaves.borrow_mut();
        Ok(leaves[id]
            .get_or_insert_with(|| {
                let value = self.store.by_id(id).value.clone();
                if self.track {
                    Var::leaf(value)
                } else {
                    Var::constant(value)
                }
            })
            .clone())
    }

    /// Gradients of every parameter touched during the pass, by store index.
    /// Untouched parameters report `None`.
    pub fn take_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.leaves
            .borrow()
            .iter()
            .map(|leaf| leaf.as_ref().and_then(|v| v.take_grad()))
            .collect()
    }
}
