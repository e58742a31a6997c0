//! Named parameter store with stable insertion order.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreError {
    DuplicateName(String),
    UnknownName(String),
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateName(n) => write!(f, "parameter {n:?} already exists"),
            Self::UnknownName(n) => write!(f, "no parameter named {n:?}"),
            Self::ShapeMismatch {
                name,
                expected,
                got,
            } => write!(f, "parameter {name:?}: expected shape {expected:?}, got {got:?}"),
        }
    }
}

impl core::error::Error for StoreError {}

/// Ordered map from parameter name to tensor. Iteration follows insertion
/// order, so optimizers and checkpoints see a stable layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), StoreError> {
        if self.index.contains_key(name) {
            return Err(StoreError::DuplicateName(name.into()));
        }
        self.index.insert(name.into(), self.entries.len());
        self.entries.push((name.into(), tensor));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    /// Borrow a parameter that is known to exist; panics otherwise.
    pub fn tensor(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    /// Add `scale * values` into the gradient buffer of `name`.
    pub fn accumulate_grad(
        &mut self,
        name: &str,
        values: &[f32],
        scale: f32,
    ) -> Result<(), StoreError> {
        let t = self
            .get_mut(name)
            .ok_or_else(|| StoreError::UnknownName(name.into()))?;
        if values.len() != t.numel() {
            return Err(StoreError::ShapeMismatch {
                name: name.into(),
                expected: t.shape().to_vec(),
                got: alloc::vec![values.len()],
            });
        }
        t.accumulate_grad(values, scale);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}
