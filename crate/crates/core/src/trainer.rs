//! Mini-batch training: compose a batch, embed each pair once per
//! modality, mine triplets in-batch, backpropagate, update.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoders::{EncoderParams, Modality};
use crate::error::{Error, Result};
use crate::numerics::{save_checkpoint, ParamStore, Tape};
use crate::retrieval::evaluate_bags;
use crate::triplet::{compose_batch, mine_triplets, BatchItem, MiningConfig, NegativeStrategy};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub lambda_sem: f64,
    pub negative_strategy: NegativeStrategy,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Write `last.ckpt` every this many epochs (and after the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            learning_rate: 1e-3,
            alpha: 0.3,
            lambda_sem: 1.0,
            negative_strategy: NegativeStrategy::All,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch_size must be even and at least 4, got {}", self.batch_size));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(self.alpha >= 0.0 && self.lambda_sem >= 0.0) {
            return bad(format!("alpha and lambda_sem must be non-negative, got {} and {}", self.alpha, self.lambda_sem));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            alpha: self.alpha,
            lambda_sem: self.lambda_sem,
            strategy: self.negative_strategy,
        }
    }
}

fn check_finite(params: &ParamStore) -> Result<()> {
    for (name, p) in params.iter() {
        if !p.frozen && !p.grad.is_finite() {
            return Err(Error::NumericFault(name.to_string()));
        }
    }
    Ok(())
}

/// `value -= lr * grad` on trainable entries, then zero every gradient.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    check_finite(params)?;
    for (_, p) in params.iter_mut() {
        if !p.frozen {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
    }
    params.zero_grads();
    Ok(())
}

/// Moment buffers for [`adam_step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

/// Bias-corrected adaptive-moment update on trainable entries, then zero
/// every gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    check_finite(params)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if p.frozen {
            continue;
        }
        let n = p.value.len();
        let m = state.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    params.zero_grads();
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
    /// Mean of both directions' MedR on the validation split per epoch; empty without one.
    pub validation_medr: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub steps: usize,
    /// Encoder forward passes run during training.
    pub forward_passes: usize,
    pub pairs_seen: usize,
}

/// Train `params` on the dataset's train split (all pairs when no split is set).
///
/// The batch sampler is reseeded from `config.seed` at the start of every
/// epoch. With `checkpoint_dir`, `last.ckpt` is written per
/// `checkpoint_every` and `best.ckpt` whenever validation MedR improves.
pub fn fit(dataset: &Dataset, mut params: EncoderParams, config: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let train: Vec<usize> = if dataset.splits.train.is_empty() {
        dataset.all_indices()
    } else {
        dataset.splits.train.clone()
    };
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mining = config.mining();
    let mut opt = OptimizerState::default();
    let mut out = TrainOutcome {
        params: params.clone(),
        history: Vec::with_capacity(config.epochs),
        validation_medr: Vec::new(),
        best_epoch: None,
        steps: 0,
        forward_passes: 0,
        pairs_seen: 0,
    };
    let mut best = f64::INFINITY;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut pool = train.clone();
        let mut losses = Vec::new();
        while pool.len() >= config.batch_size {
            let batch = match compose_batch(dataset, &pool, config.batch_size, &mut rng) {
                Ok(b) => b,
                Err(Error::BatchComposition(_)) if !losses.is_empty() => break,
                Err(e) => return Err(e),
            };
            pool.retain(|i| !batch.contains(i));

            let mut tape = Tape::new();
            let mut items = Vec::with_capacity(2 * batch.len());
            for (slot, &i) in batch.iter().enumerate() {
                let pair = &dataset.pairs[i];
                let img = params.encode_image(&pair.image, &mut tape)?;
                let rec = params.encode_recipe(&pair.recipe, &mut tape)?;
                out.forward_passes += 2;
                for (var, modality) in [(img, Modality::Image), (rec, Modality::Recipe)] {
                    items.push(BatchItem {
                        vector: tape.value(var).data().to_vec(),
                        pair: slot,
                        class_id: pair.class_id(),
                        modality,
                        var: Some(var),
                    });
                }
            }
            out.pairs_seen += batch.len();
            let mined = mine_triplets(&mut tape, &items, &mining, &mut rng)?;
            losses.push(mined.loss);
            out.steps += 1;
            if let Some(loss) = mined.loss_var {
                let store = params.store_mut();
                tape.backward(loss, 1.0, store)?;
                match config.optimizer {
                    OptimizerKind::Sgd => sgd_step(store, config.learning_rate)?,
                    OptimizerKind::Adam => adam_step(
                        store,
                        &mut opt,
                        config.learning_rate,
                        config.beta1,
                        config.beta2,
                        config.eps,
                    )?,
                }
            }
        }
        if losses.is_empty() {
            return Err(Error::BatchComposition(format!(
                "training split of {} pairs yields no batch of {}",
                train.len(),
                config.batch_size
            )));
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        out.history.push(mean);

        let mut improved = false;
        if dataset.splits.validation.len() >= 2 {
            let val = &dataset.splits.validation;
            let reports = evaluate_bags(&params, dataset, val, val.len(), 1, config.seed)?;
            let medr = reports.iter().map(|r| r.summary.medr.mean).sum::<f64>() / reports.len() as f64;
            out.validation_medr.push(medr);
            if medr < best {
                best = medr;
                out.best_epoch = Some(epoch);
                improved = true;
            }
            log::info!("epoch {epoch}: loss {mean:.5}, validation MedR {medr:.2}");
        } else {
            log::info!("epoch {epoch}: loss {mean:.5}");
        }

        if let Some(dir) = checkpoint_dir {
            if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
                save_checkpoint(params.store(), dir.join("last.ckpt"))?;
            }
            if improved {
                save_checkpoint(params.store(), dir.join("best.ckpt"))?;
            }
        }
    }
    out.params = params;
    Ok(out)
}

/// Two-column CSV `epoch,mean_loss`, epochs numbered from 1.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, l).expect("writing to a String");
    }
    s
}

pub fn write_loss_history(history: &[f64], path: impl Into<PathBuf>) -> Result<()> {
    let path = path.into();
    fs::write(&path, loss_history_csv(history)).map_err(|e| Error::io(path, e))
}
