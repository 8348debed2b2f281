//! JSON checkpoint of a [`ParamStore`].
//!
//! Values are written with shortest round-trip formatting and parsed with
//! exact float parsing, so save followed by load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamStore};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub rng_seed: u64,
    pub params: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(name, p)| {
                let entry = CheckpointEntry {
                    shape: p.value.shape().to_vec(),
                    frozen: p.frozen,
                    values: p.value.data().to_vec(),
                };
                (name.to_string(), entry)
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            rng_seed: store.rng_seed(),
            params,
        }
    }

    pub fn into_store(self) -> Result<ParamStore> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let mut store = ParamStore::new(self.rng_seed);
        for (name, e) in self.params {
            let value = DenseArray::new(e.shape, e.values)?;
            if !value.is_finite() {
                return Err(Error::Integrity(format!("parameter {name:?} holds non-finite values")));
            }
            store.insert(name, value, e.frozen)?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = Checkpoint::from_store(store).to_json();
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    ckpt.into_store()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(-1e6f64..1e6, 1..40), seed in any::<u64>()) {
            let mut store = ParamStore::new(seed);
            let n = values.len();
            store.insert("a", DenseArray::vector(values), false).unwrap();
            store.insert("frozen", DenseArray::zeros(&[n, 1]), true).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&store, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            prop_assert_eq!(back.rng_seed(), seed);
            for (name, p) in store.iter() {
                let q = back.get(name).unwrap();
                prop_assert_eq!(q.frozen, p.frozen);
                prop_assert_eq!(q.value.shape(), p.value.shape());
                for (x, y) in p.value.data().iter().zip(q.value.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn awkward_floats_round_trip() {
        let vals = vec![0.1 + 0.2, f64::MIN_POSITIVE, 1e-310, -0.0, 5e-324, 1.7976931348623157e308];
        let mut store = ParamStore::new(3);
        store.insert("w", DenseArray::vector(vals.clone()), false).unwrap();
        let json = Checkpoint::from_store(&store).to_json();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let back = back.into_store().unwrap();
        for (x, y) in vals.iter().zip(back.value("w").unwrap().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_checkpoint("/nonexistent/model.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.ckpt"));
    }
}
