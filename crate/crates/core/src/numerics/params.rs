use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// One named parameter and its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: DenseArray,
    pub grad: DenseArray,
    /// Frozen parameters are never touched by an optimizer.
    pub frozen: bool,
}

/// Named trainable arrays with paired gradient buffers.
///
/// Iteration order is the lexicographic order of names, which keeps
/// optimizer updates and checkpoints deterministic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray, frozen: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name:?} registered twice")));
        }
        let grad = DenseArray::zeros(value.shape());
        self.entries.insert(name, Param { value, grad, frozen });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&DenseArray> {
        Ok(&self.get(name)?.value)
    }

    /// Replace a parameter's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: DenseArray) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::dim(
                "ParamStore::set_value",
                format!("{name}: expected {:?}, got {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&DenseArray> {
        Ok(&self.get(name)?.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Add `delta` into the gradient buffer of `name`.
    pub(crate) fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.len() != delta.len() {
            return Err(Error::dim(
                "ParamStore::accumulate_grad",
                format!("{name}: gradient of length {} for {} values", delta.len(), p.grad.len()),
            ));
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Number of trainable (non-frozen) scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries
            .values()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }
}
