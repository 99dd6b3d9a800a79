use std::collections::BTreeMap;

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Float = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Copies every tensor whose name starts with `prefix`, renaming the prefix.
    pub fn copy_prefix(&mut self, from: &Self, prefix: &str, renamed: &str) {
        for (name, t) in from.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let rest = &name[prefix.len()..];
            self.insert(format!("{renamed}{rest}"), t.clone());
        }
    }

    /// Sub-store of every tensor whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        let tensors = self
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        Self { tensors }
    }

    pub fn merge(&mut self, other: &Self) {
        for (n, t) in other.iter() {
            self.insert(n.clone(), t.clone());
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}
