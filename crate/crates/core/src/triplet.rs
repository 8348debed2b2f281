//! Hinge triplet loss with instance and semantic triplet sources, mined
//! inside the mini-batch.
//!
//! Every dataset pair contributes one image and one recipe embedding to a
//! batch. Each embedding is used as an anchor:
//!
//! * instance source: positive is the matching item of the other modality,
//!   negatives are the other-modality items of different instances;
//! * semantic source: positives are the labeled items (either modality) of
//!   the anchor's class other than the anchor and its match, negatives are
//!   the labeled items (either modality) of a different class.
//!
//! The batch loss is the mean over active instance triplets plus
//! `lambda_sem` times the mean over active semantic triplets.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoders::{ClassId, Embedding, Modality};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Tape, Var};

/// Squared Euclidean distance between two embeddings.
pub fn distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    squared_distance(&a.vector, &b.vector)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(
            "distance",
            format!("vectors have {} and {} entries", a.len(), b.len()),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `max(0, d_qp + alpha - d_qn)`.
pub fn triplet_loss(d_qp: f64, d_qn: f64, alpha: f64) -> Result<f64> {
    if d_qp < 0.0 || d_qn < 0.0 || alpha < 0.0 || !(d_qp + d_qn + alpha).is_finite() {
        return Err(Error::Contract(format!(
            "triplet_loss needs finite non-negative inputs, got d_qp={d_qp}, d_qn={d_qn}, alpha={alpha}"
        )));
    }
    Ok((d_qp + alpha - d_qn).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletSource {
    Instance,
    Semantic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeStrategy {
    /// Every candidate negative forms a triplet.
    #[default]
    All,
    /// Only the negative with the largest hinge value per (anchor, positive).
    Hardest,
    /// One uniformly drawn negative per (anchor, positive).
    RandomOne,
}

impl std::str::FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "hardest" => Ok(Self::Hardest),
            "random-one" => Ok(Self::RandomOne),
            other => Err(Error::Config(format!("unknown negative strategy {other:?}"))),
        }
    }
}

/// One batch item: an embedding plus the relations mining needs.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub vector: Vec<f64>,
    /// Index of the dataset pair inside the batch; equal for an image and its recipe.
    pub pair: usize,
    pub class_id: Option<ClassId>,
    pub modality: Modality,
    /// Tape node holding `vector`, when mining builds a differentiable loss.
    pub var: Option<Var>,
}

/// Indices into the batch item list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub q: usize,
    pub p: usize,
    pub n: usize,
    pub source: TripletSource,
    pub margin: f64,
    /// Hinge value of this triplet.
    pub loss: f64,
}

impl Triplet {
    pub fn is_active(&self) -> bool {
        self.loss > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub alpha: f64,
    pub lambda_sem: f64,
    pub strategy: NegativeStrategy,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            lambda_sem: 1.0,
            strategy: NegativeStrategy::All,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MiningOutcome {
    pub triplets: Vec<Triplet>,
    pub loss: f64,
    pub active_instance: usize,
    pub active_semantic: usize,
    /// Differentiable loss node; `None` when no triplet is active or the
    /// items carry no tape nodes.
    pub loss_var: Option<Var>,
}

fn positives(items: &[BatchItem], q: usize, source: TripletSource) -> Vec<usize> {
    let a = &items[q];
    match source {
        TripletSource::Instance => items
            .iter()
            .enumerate()
            .filter(|(_, b)| b.pair == a.pair && b.modality != a.modality)
            .map(|(i, _)| i)
            .collect(),
        TripletSource::Semantic => {
            let Some(c) = a.class_id else { return Vec::new() };
            items
                .iter()
                .enumerate()
                .filter(|(_, b)| b.class_id == Some(c) && b.pair != a.pair)
                .map(|(i, _)| i)
                .collect()
        }
    }
}

fn negatives(items: &[BatchItem], q: usize, source: TripletSource) -> Vec<usize> {
    let a = &items[q];
    match source {
        TripletSource::Instance => items
            .iter()
            .enumerate()
            .filter(|(_, b)| b.modality != a.modality && b.pair != a.pair)
            .map(|(i, _)| i)
            .collect(),
        TripletSource::Semantic => {
            let Some(c) = a.class_id else { return Vec::new() };
            items
                .iter()
                .enumerate()
                .filter(|(_, b)| matches!(b.class_id, Some(d) if d != c))
                .map(|(i, _)| i)
                .collect()
        }
    }
}

/// Select triplets and compute the batch loss from embedding values alone.
pub fn select_triplets<R: Rng + ?Sized>(
    items: &[BatchItem],
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<(Vec<Triplet>, f64)> {
    let (triplets, loss, _, _) = select(items, cfg, rng)?;
    Ok((triplets, loss))
}

fn select<R: Rng + ?Sized>(
    items: &[BatchItem],
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<(Vec<Triplet>, f64, usize, usize)> {
    if items.is_empty() {
        return Err(Error::Contract("mine_triplets on an empty batch".into()));
    }
    let dist = |i: usize, j: usize| squared_distance(&items[i].vector, &items[j].vector);
    let mut triplets = Vec::new();
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];

    for source in [TripletSource::Instance, TripletSource::Semantic] {
        for q in 0..items.len() {
            let negs = negatives(items, q, source);
            if negs.is_empty() {
                continue;
            }
            for p in positives(items, q, source) {
                let d_qp = dist(q, p)?;
                let mut candidates = Vec::with_capacity(negs.len());
                for &n in &negs {
                    let loss = triplet_loss(d_qp, dist(q, n)?, cfg.alpha)?;
                    candidates.push(Triplet {
                        q,
                        p,
                        n,
                        source,
                        margin: cfg.alpha,
                        loss,
                    });
                }
                match cfg.strategy {
                    NegativeStrategy::All => triplets.extend(candidates),
                    NegativeStrategy::Hardest => {
                        // first maximum wins ties
                        let best = candidates
                            .iter()
                            .copied()
                            .reduce(|b, t| if t.loss > b.loss { t } else { b });
                        triplets.extend(best);
                    }
                    NegativeStrategy::RandomOne => {
                        triplets.extend(candidates.choose(rng).copied());
                    }
                }
            }
        }
    }
    for t in &triplets {
        if t.is_active() {
            let k = t.source as usize;
            sums[k] += t.loss;
            counts[k] += 1;
        }
    }
    let mean = |k: usize| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
    let loss = mean(0) + cfg.lambda_sem * mean(1);
    Ok((triplets, loss, counts[0], counts[1]))
}

/// Mine in-batch triplets and, when the items carry tape nodes, build the
/// differentiable batch loss on `tape`.
///
/// Once the active set is fixed the loss is linear in the pairwise
/// distances, so the tape holds one distance node per distinct pair
/// weighted by how often it appears (positively or negatively) in active
/// triplets. Inactive triplets contribute nothing to the gradient.
pub fn mine_triplets<R: Rng + ?Sized>(
    tape: &mut Tape,
    items: &[BatchItem],
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<MiningOutcome> {
    let (triplets, loss, active_instance, active_semantic) = select(items, cfg, rng)?;
    let mut outcome = MiningOutcome {
        triplets,
        loss,
        active_instance,
        active_semantic,
        loss_var: None,
    };
    if active_instance + active_semantic == 0 || items.iter().any(|i| i.var.is_none()) {
        return Ok(outcome);
    }

    let weight = |s: TripletSource| match s {
        TripletSource::Instance => 1.0 / active_instance as f64,
        TripletSource::Semantic => cfg.lambda_sem / active_semantic as f64,
    };
    let mut coef: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut constant = 0.0;
    for t in outcome.triplets.iter().filter(|t| t.is_active()) {
        let w = weight(t.source);
        *coef.entry(ordered(t.q, t.p)).or_default() += w;
        *coef.entry(ordered(t.q, t.n)).or_default() -= w;
        constant += w * t.margin;
    }

    let mut dists = Vec::with_capacity(coef.len());
    let mut weights = Vec::with_capacity(coef.len());
    for (&(i, j), &c) in &coef {
        let (a, b) = (items[i].var.unwrap(), items[j].var.unwrap());
        let diff = tape.sub(a, b)?;
        dists.push(tape.squared_norm(diff));
        weights.push(c);
    }
    let d = tape.concat(&dists)?;
    let w = tape.constant(DenseArray::vector(weights));
    let weighted = tape.mul(d, w)?;
    let total = tape.sum(weighted);
    let offset = tape.constant(DenseArray::scalar(constant));
    outcome.loss_var = Some(tape.add(total, offset)?);
    Ok(outcome)
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

fn class_counts(dataset: &Dataset, ids: &[usize]) -> BTreeMap<ClassId, usize> {
    let mut m = BTreeMap::new();
    for &i in ids {
        if let Some(c) = dataset.pairs[i].class_id() {
            *m.entry(c).or_default() += 1;
        }
    }
    m
}

fn batch_ok(counts: &BTreeMap<ClassId, usize>) -> bool {
    counts.len() >= 2 && counts.values().any(|&n| n >= 2)
}

/// Draw `batch_size` distinct pair indices from `pool` such that at least
/// two share a class and at least two classes are present.
///
/// A uniformly sampled batch that misses either guarantee is repaired by
/// swapping in items from the rest of the pool.
pub fn compose_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    pool: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size < 4 || !batch_size.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "batch size must be even and at least 4, got {batch_size}"
        )));
    }
    if pool.len() < batch_size {
        return Err(Error::BatchComposition(format!(
            "pool of {} pairs cannot fill a batch of {batch_size}",
            pool.len()
        )));
    }
    let mut order = pool.to_vec();
    let (chosen, rest) = order.partial_shuffle(rng, batch_size);
    let mut batch = chosen.to_vec();
    let rest = rest.to_vec();

    let mut counts = class_counts(dataset, &batch);
    if counts.len() < 2 {
        // add a second class, replacing an item of the dominant one
        let (dominant, _) = counts.iter().max_by_key(|(_, n)| **n).map(|(c, n)| (*c, *n)).unzip();
        let donor = rest
            .iter()
            .copied()
            .find(|&i| matches!(dataset.pairs[i].class_id(), Some(c) if Some(c) != dominant));
        if let Some(donor) = donor {
            let slot = batch
                .iter()
                .rposition(|&i| dataset.pairs[i].class_id() == dominant || dominant.is_none())
                .expect("batch is nonempty");
            batch[slot] = donor;
            counts = class_counts(dataset, &batch);
        }
    }
    if !counts.values().any(|&n| n >= 2) {
        // every class present once: pull in a second member of some class
        let donor = rest.iter().copied().find(|&i| {
            matches!(dataset.pairs[i].class_id(), Some(c) if counts.contains_key(&c))
        });
        if let Some(donor) = donor {
            let target = dataset.pairs[donor].class_id();
            let slot = batch
                .iter()
                .rposition(|&i| {
                    let c = dataset.pairs[i].class_id();
                    c.is_none() || (c != target && counts.len() > 2)
                })
                .or_else(|| batch.iter().rposition(|&i| dataset.pairs[i].class_id() != target));
            if let Some(slot) = slot {
                batch[slot] = donor;
                counts = class_counts(dataset, &batch);
            }
        }
    }
    if !batch_ok(&counts) {
        return Err(Error::BatchComposition(format!(
            "no batch of {batch_size} from {} pairs has a shared class and two distinct classes",
            pool.len()
        )));
    }
    Ok(batch)
}
