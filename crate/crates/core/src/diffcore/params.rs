use std::collections::BTreeMap;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Named trainable arrays. Iteration is sorted by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, frozen: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.insert(name, ParamEntry { tensor, frozen });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry<T>> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                entry.frozen = frozen;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.tensor.grad = None;
        }
    }

    /// Adds gradients produced by a graph into the matching entries.
    pub fn accumulate_grads(&mut self, grads: Vec<(String, Vec<T>)>) -> Result<()> {
        for (name, g) in grads {
            let entry = self.get_mut(&name)?;
            if g.len() != entry.tensor.len() {
                return Err(Error::shape("accumulate_grads", entry.tensor.shape(), &[g.len()]));
            }
            match entry.tensor.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => entry.tensor.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Copies every entry whose name starts with `prefix` into a new store.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies values from `other` into existing entries, requiring identical shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, src) in other.iter() {
            let dst = self.get_mut(name)?;
            if dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape of `{name}` is {:?} in checkpoint but {:?} in model",
                    src.tensor.shape(),
                    dst.tensor.shape()
                )));
            }
            dst.tensor.values_mut().copy_from_slice(src.tensor.values());
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        ParamEntry {
                            tensor: v.tensor.cast(),
                            frozen: v.frozen,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, ParamEntry<T>)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }
}
