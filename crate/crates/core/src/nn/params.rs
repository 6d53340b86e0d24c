use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMap, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// The store's tensors registered as leaves on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    first_leaf: usize,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of every parameter, in store order.
    pub fn grads(&self, g: &GradMap) -> Vec<Tensor> {
        (0..self.vars.len())
            .map(|i| g.get(self.first_leaf + i))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Registers every tensor as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let first_leaf = tape.num_leaves();
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Bound { vars, first_leaf }
    }

    /// Same as [`ParamStore::bind`] but with `tensors` substituted, for
    /// evaluating the model at perturbed parameters.
    pub fn bind_with(&self, tape: &mut Tape, tensors: &[Tensor]) -> Bound {
        let first_leaf = tape.num_leaves();
        let vars = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Bound { vars, first_leaf }
    }
}
