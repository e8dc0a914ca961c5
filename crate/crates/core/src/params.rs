//! Named, trainable parameter tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    decay: bool,
}

/// Ordered collection of parameters. Insertion order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    pending: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `tensor` as trainable. `decay` selects decoupled weight decay.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry {
            name,
            tensor: tensor.with_grad(),
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Number of backward passes accumulated since the last [`zero_grad`](Self::zero_grad).
    pub fn pending_grads(&self) -> usize {
        self.pending
    }

    /// Records that one more backward pass has been added to the accumulators.
    pub fn note_accumulation(&mut self) {
        self.pending += 1;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
        self.pending = 0;
    }

    /// Replaces the values of parameter `name`, keeping its gradient slot.
    pub fn set_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("unexpected parameter {name:?}")))?;
        let t = &mut self.entries[id.0].tensor;
        if t.shape() != shape {
            return Err(Error::ConfigMismatch(format!(
                "parameter {name:?} has shape {:?}, stored {:?}",
                t.shape(),
                shape
            )));
        }
        let checked = Tensor::new(shape, values)?;
        t.data_mut().copy_from_slice(checked.data());
        Ok(())
    }
}
