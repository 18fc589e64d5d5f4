use std::collections::HashMap;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Tensors indexed by [`ParamId`]; used both for weights and for gradients.
#[derive(Clone, Debug, Default)]
pub struct Slots<T>(Vec<Tensor<T>>);

impl<T> Index<ParamId> for Slots<T> {
    type Output = Tensor<T>;
    fn index(&self, id: ParamId) -> &Tensor<T> {
        &self.0[id.0]
    }
}

impl<T> IndexMut<ParamId> for Slots<T> {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.0[id.0]
    }
}

impl<T: Real> Slots<T> {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Named model weights with matching gradient slots.
///
/// Iteration order is insertion order, which the model builder keeps stable,
/// so checkpoints and optimizer state line up across runs. Non-trainable
/// entries hold batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    index: HashMap<String, usize>,
    trainable: Vec<bool>,
    values: Slots<T>,
    grads: Slots<T>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            index: HashMap::new(),
            trainable: Vec::new(),
            values: Slots(Vec::new()),
            grads: Slots(Vec::new()),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.names.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.trainable.push(trainable);
        self.grads.0.push(Tensor::zeros(value.shape()));
        self.values.0.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id]
    }

    pub fn values(&self) -> &Slots<T> {
        &self.values
    }

    pub fn grads(&self) -> &Slots<T> {
        &self.grads
    }

    /// Weights for reading and gradient slots for accumulation, borrowed together.
    pub fn split_mut(&mut self) -> (&Slots<T>, &mut Slots<T>) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            g.fill(T::zero());
        }
    }

    /// Replace a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if self.values[id].shape() != value.shape() {
            return Err(Error::shape(
                name,
                format!("expected {:?}, got {:?}", self.values[id].shape(), value.shape()),
            ));
        }
        self.values[id] = value;
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.ids()
            .filter(|&id| self.is_trainable(id))
            .map(|id| self.values[id].len())
            .sum()
    }

    /// Trainable scalar counts grouped by the first `depth` dot-separated
    /// components of each name, in first-appearance order.
    pub fn breakdown(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for id in self.ids().filter(|&id| self.is_trainable(id)) {
            let key: Vec<&str> = self.names[id.0].split('.').take(depth).collect();
            let key = key.join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += self.values[id].len(),
                None => out.push((key, self.values[id].len())),
            }
        }
        out
    }

    /// Same names and values in another precision, gradients zeroed.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            index: self.index.clone(),
            trainable: self.trainable.clone(),
            values: Slots(self.values.0.iter().map(|t| t.cast()).collect()),
            grads: Slots(self.grads.0.iter().map(|t| Tensor::zeros(t.shape())).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_ordered() {
        let mut s = ParamStore::<f32>::new();
        s.add("b.w", Tensor::zeros(&[2, 3]), true).unwrap();
        s.add("a.w", Tensor::zeros(&[4]), true).unwrap();
        s.add("a.running_mean", Tensor::zeros(&[4]), false).unwrap();
        assert!(s.add("a.w", Tensor::zeros(&[1]), true).is_err());
        let names: Vec<_> = s.ids().map(|id| s.name(id).to_string()).collect();
        assert_eq!(names, ["b.w", "a.w", "a.running_mean"]);
        assert_eq!(s.count_trainable(), 10);
        assert_eq!(s.breakdown(1), vec![("b".to_string(), 6), ("a".to_string(), 4)]);
        for id in s.ids() {
            assert_eq!(s.grad(id).shape(), s.value(id).shape());
        }
    }
}
