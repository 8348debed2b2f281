//! Run configuration: one TOML document with a section per concern.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! n_classes = 20
//!
//! [train]
//! epochs = 50
//!
//! [eval]
//! bag_size = 1000
//!
//! [paths]
//! data = "pairs.jsonl"
//! ```
//!
//! Every field has a default, so an empty document is a valid config.
//! The top-level `seed` is the single source of randomness: [`RunConfig::with_seed`]
//! copies it into the generator and trainer sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::encoders::ModelDims;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            synth: SynthConfig::default(),
            model: ModelDims::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bag_size: usize,
    pub n_bags: usize,
    /// Train, validation and test fractions applied to a loaded dataset.
    pub split_fractions: [f64; 3],
    /// Result count for queries.
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bag_size: 1000,
            n_bags: 10,
            split_fractions: [0.8, 0.1, 0.1],
            k: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Set the master seed and propagate it to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.eval.split_fractions;
        (a, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} does not fit a signed 64-bit integer", self.seed)));
        }
        if self.synth.seed != self.seed || self.train.seed != self.seed {
            return Err(Error::Config(format!(
                "section seeds ({}, {}) disagree with the master seed {}",
                self.synth.seed, self.train.seed, self.seed
            )));
        }
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let f = self.eval.split_fractions;
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || f.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {f:?} must lie in [0, 1] and sum to at most 1"
            )));
        }
        if self.eval.bag_size == 0 || self.eval.n_bags == 0 || self.eval.k == 0 {
            return Err(Error::Config("bag_size, n_bags and k must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn default_echoes() {
        let text = RunConfig::default().to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn partial_document_keeps_other_defaults() {
        let c = RunConfig::from_toml_str("seed = 3\n[train]\nepochs = 2\n[paths]\ndata = \"d.jsonl\"\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.paths.data.as_deref(), Some(Path::new("d.jsonl")));
        let again = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[nope]\n").is_err());
    }

    #[test]
    fn seed_propagates() {
        let c = RunConfig::default().with_seed(11);
        assert_eq!((c.synth.seed, c.train.seed), (11, 11));
        c.validate().unwrap();
        let mut d = c.clone();
        d.train.seed = 12;
        assert!(matches!(d.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_fractions_rejected() {
        let mut c = RunConfig::default();
        c.eval.split_fractions = [0.8, 0.2, 0.1];
        assert!(c.validate().is_err());
    }
}
