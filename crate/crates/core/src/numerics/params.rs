use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Index of an entry in a [`ParamStore`]. Stable once the store is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameter tensors with gradient accumulators, kept in lexicographic
/// name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

/// Sparse per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub(crate) slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// One optional dense gradient per store entry, in store order.
    pub fn from_slots(slots: Vec<Option<Vec<T>>>) -> Self {
        Self { slots }
    }

    /// Empty buffer sized for `store`.
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// Zeroes every allocated slot, keeping the allocations.
    pub fn clear(&mut self) {
        for s in self.slots.iter_mut().flatten() {
            s.iter_mut().for_each(|g| *g = T::zero());
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Inserts a new entry; names must be unique. Ids of entries sorting
    /// after `name` shift, so resolve ids with [`ParamStore::id`] once the
    /// store is complete.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        match self.entries.binary_search_by(|e| e.name.as_str().cmp(&name)) {
            Ok(_) => Err(Error::invalid(format!("duplicate parameter `{name}`"))),
            Err(pos) => {
                let grad = Tensor::zeros(value.shape());
                self.entries.insert(pos, ParamEntry { name, value, grad });
                Ok(())
            }
        }
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.entries
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .map(ParamId)
            .map_err(|_| Error::invalid(format!("unknown parameter `{name}`")))
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self.id(name)?;
        let got = self.entries[id.0].value.shape();
        if got != shape {
            return Err(Error::dim(format!(
                "parameter `{name}` has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds a backward pass's gradients into the accumulators.
    pub fn accumulate(&mut self, grads: &Grads<T>) -> Result<()> {
        if grads.slots.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "gradient set has {} slots, store has {} entries",
                grads.slots.len(),
                self.entries.len()
            )));
        }
        for (e, slot) in self.entries.iter_mut().zip(&grads.slots) {
            if let Some(g) = slot {
                for (acc, &d) in e.grad.data_mut().iter_mut().zip(g) {
                    *acc = *acc + d;
                }
            }
        }
        Ok(())
    }

    /// Same names and shapes, values converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                })
                .collect(),
        }
    }

    /// FNV-1a over names, shapes and the bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for e in &self.entries {
            bytes.extend_from_slice(e.name.as_bytes());
            for &d in e.value.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                bytes.extend_from_slice(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        super::rng::fnv1a64(&bytes)
    }
}
