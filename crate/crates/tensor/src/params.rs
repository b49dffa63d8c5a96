use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried along with the model (batch-norm running statistics).
    Buffer,
}

/// Named parameters and buffers of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::InvalidArgument {
                op: "ParamStore::add",
                msg: format!("duplicate parameter name `{name}`"),
            });
        }
        tensor.requires_grad = kind == ParamKind::Trainable;
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.kinds.push(kind);
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.kinds[id.0] == ParamKind::Trainable)
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.tensors[id.0].len()).sum()
    }

    /// Record every entry on `tape`: trainable ones as gradient leaves, buffers as constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self
                .tensors
                .iter()
                .zip(&self.kinds)
                .map(|(t, k)| match k {
                    ParamKind::Trainable => tape.variable(t),
                    ParamKind::Buffer => tape.constant(t),
                })
                .collect(),
        }
    }

    /// Move gradients of trainable parameters from a reverse sweep into their grad slots.
    /// Parameters unreachable from the loss end up with `grad = None`.
    pub fn collect_grads(&mut self, binding: &Binding, grads: &mut Gradients<T>) {
        for i in 0..self.tensors.len() {
            if self.kinds[i] == ParamKind::Trainable {
                self.tensors[i].grad = grads.take(binding.vars[i]);
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.grad = None);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, ParamKind, &Tensor<T>)> {
        self.ids()
            .map(move |id| (id, self.names[id.0].as_str(), self.kinds[id.0], &self.tensors[id.0]))
    }

    /// Bitwise snapshot of all values, used for determinism checks.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.as_f64().to_bits()))
            .collect()
    }
}

/// Tape variables for every entry of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Bind store entries to existing tape variables, in [`ParamId`] order.
    /// Used when the parameters themselves are the inputs of a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
