//! Exact ranking, median rank, recall at K and the bag protocol.
//!
//! Ranks are 1-based. Items are ordered by ascending squared distance to
//! the query, ties broken by ascending instance id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoders::{ClassId, EncoderParams, Embedding, Modality};
use crate::error::{Error, Result};
use crate::triplet::squared_distance;

/// Cut-offs reported for recall.
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub class_id: Option<ClassId>,
    pub vector: Vec<f64>,
}

/// Exhaustive index over unit vectors of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    modality: Modality,
    dim: usize,
    entries: Vec<IndexEntry>,
    ids: HashSet<String>,
}

impl EmbeddingIndex {
    pub fn new(modality: Modality, dim: usize) -> Self {
        Self {
            modality,
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, class_id: Option<ClassId>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::dim(
                "EmbeddingIndex::push",
                format!("{id}: vector has {} entries, index dimension is {}", vector.len(), self.dim),
            ));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Contract(format!("{id}: index vectors must be unit norm, got {norm}")));
        }
        if !self.ids.insert(id.clone()) {
            return Err(Error::Integrity(format!("duplicate id {id:?} in {} index", self.modality)));
        }
        self.entries.push(IndexEntry { id, class_id, vector });
        Ok(())
    }

    pub fn push_embedding(&mut self, e: Embedding, class_id: Option<ClassId>) -> Result<()> {
        if e.modality != self.modality {
            return Err(Error::Contract(format!(
                "{} embedding pushed into {} index",
                e.modality, self.modality
            )));
        }
        self.push(e.source_id, class_id, e.vector)
    }

    /// Embed the given pairs' `modality` side with frozen parameters.
    pub fn build(params: &EncoderParams, dataset: &Dataset, ids: &[usize], modality: Modality) -> Result<Self> {
        let embs = embed_pairs(params, dataset, ids, modality)?;
        let mut index = Self::new(modality, params.dims().embed_dim);
        for (e, &i) in embs.into_iter().zip(ids) {
            index.push_embedding(e, dataset.pairs[i].class_id())?;
        }
        Ok(index)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Full ranking of an index against one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankList {
    pub query_id: String,
    /// Index positions ordered by ascending distance.
    pub order: Vec<usize>,
    /// Distance of each entry in `order`.
    pub distances: Vec<f64>,
    /// 1-based position of the entry sharing the query's id, if present.
    pub rank_of_truth: Option<usize>,
}

impl RankList {
    pub fn ids<'a>(&'a self, index: &'a EmbeddingIndex) -> impl Iterator<Item = &'a str> + 'a {
        self.order.iter().map(move |&i| index.entries[i].id.as_str())
    }
}

fn by_distance_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Rank every index entry by distance to `query`.
pub fn rank(query: &Embedding, index: &EmbeddingIndex) -> Result<RankList> {
    rank_vector(&query.source_id, &query.vector, index)
}

pub fn rank_vector(query_id: &str, query: &[f64], index: &EmbeddingIndex) -> Result<RankList> {
    if query.len() != index.dim {
        return Err(Error::dim(
            "rank",
            format!("query has {} entries, index dimension is {}", query.len(), index.dim),
        ));
    }
    let dist: Vec<f64> = index
        .entries
        .iter()
        .map(|e| squared_distance(query, &e.vector))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| {
        by_distance_then_id(
            (dist[a], &index.entries[a].id),
            (dist[b], &index.entries[b].id),
        )
    });
    let rank_of_truth = order
        .iter()
        .position(|&i| index.entries[i].id == query_id)
        .map(|p| p + 1);
    Ok(RankList {
        query_id: query_id.to_string(),
        distances: order.iter().map(|&i| dist[i]).collect(),
        order,
        rank_of_truth,
    })
}

/// 1-based rank of `pool[truth]` for `query` without sorting the pool.
fn rank_of_truth(query: &[f64], pool: &[&Embedding], truth: usize) -> usize {
    let d_truth = squared_distance(query, &pool[truth].vector).expect("equal dims");
    let key = (d_truth, pool[truth].source_id.as_str());
    1 + pool
        .iter()
        .enumerate()
        .filter(|&(j, e)| {
            j != truth
                && by_distance_then_id(
                    (squared_distance(query, &e.vector).expect("equal dims"), &e.source_id),
                    key,
                ) == Ordering::Less
        })
        .count()
}

pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Contract("median of an empty rank list".into()));
    }
    let mut r = ranks.to_vec();
    r.sort_unstable();
    let n = r.len();
    Ok(if n % 2 == 1 {
        r[n / 2] as f64
    } else {
        (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0
    })
}

/// Percentage of ranks at or below `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("recall cut-off must be at least 1".into()));
    }
    if ranks.is_empty() {
        return Err(Error::Contract("recall of an empty rank list".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToRecipe,
    RecipeToImage,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ImageToRecipe, Direction::RecipeToImage];

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToRecipe => Modality::Image,
            Direction::RecipeToImage => Modality::Recipe,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::ImageToRecipe => "image->recipe",
            Direction::RecipeToImage => "recipe->image",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub medr: MeanStd,
    pub recall: BTreeMap<usize, MeanStd>,
}

/// Per-bag metrics for one retrieval direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub bag_size: usize,
    pub medr: Vec<f64>,
    pub recall: BTreeMap<usize, Vec<f64>>,
    pub summary: EvalSummary,
}

impl EvalReport {
    fn from_bags(direction: Direction, bag_size: usize, bags: &[Vec<usize>]) -> Result<Self> {
        let medr = bags.iter().map(|r| median_rank(r)).collect::<Result<Vec<_>>>()?;
        let mut recall = BTreeMap::new();
        for k in RECALL_KS {
            let per_bag = bags.iter().map(|r| recall_at_k(r, k)).collect::<Result<Vec<_>>>()?;
            recall.insert(k, per_bag);
        }
        let summary = EvalSummary {
            medr: MeanStd::of(&medr),
            recall: recall.iter().map(|(k, v)| (*k, MeanStd::of(v))).collect(),
        };
        Ok(Self {
            direction,
            bag_size,
            medr,
            recall,
            summary,
        })
    }

    pub fn n_bags(&self) -> usize {
        self.medr.len()
    }

    pub fn recall_mean(&self, k: usize) -> f64 {
        self.summary.recall[&k].mean
    }
}

/// Embed one side of the given pairs; order follows `ids`.
pub fn embed_pairs(params: &EncoderParams, dataset: &Dataset, ids: &[usize], modality: Modality) -> Result<Vec<Embedding>> {
    ids.par_iter()
        .map(|&i| {
            let p = dataset.pairs.get(i).ok_or_else(|| {
                Error::Contract(format!("pair index {i} out of range"))
            })?;
            match modality {
                Modality::Image => params.embed_image(&p.image),
                Modality::Recipe => params.embed_recipe(&p.recipe),
            }
        })
        .collect()
}

/// Bag protocol over precomputed matched embeddings: `images[i]` matches `recipes[i]`.
///
/// Each bag samples `bag_size` pairs without replacement (bags may
/// overlap). Every query of the bag is ranked against the bag's
/// opposite-modality pool. A `bag_size` above the pair count is clamped.
pub fn evaluate_embeddings(
    images: &[Embedding],
    recipes: &[Embedding],
    direction: Direction,
    bag_size: usize,
    n_bags: usize,
    seed: u64,
) -> Result<EvalReport> {
    let n = images.len();
    if n != recipes.len() {
        return Err(Error::Contract(format!(
            "{n} image embeddings but {} recipe embeddings",
            recipes.len()
        )));
    }
    if n < 2 {
        return Err(Error::Contract(format!("evaluation needs at least 2 pairs, got {n}")));
    }
    if n_bags == 0 || bag_size == 0 {
        return Err(Error::Contract("need at least one bag of at least one pair".into()));
    }
    let bag_size = if bag_size > n {
        log::warn!("bag size {bag_size} exceeds the {n} available pairs; clamping");
        n
    } else {
        bag_size
    };
    let (queries, pool) = match direction {
        Direction::ImageToRecipe => (images, recipes),
        Direction::RecipeToImage => (recipes, images),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags = Vec::with_capacity(n_bags);
    for _ in 0..n_bags {
        let members = rand::seq::index::sample(&mut rng, n, bag_size).into_vec();
        let bag_pool: Vec<&Embedding> = members.iter().map(|&i| &pool[i]).collect();
        let ranks: Vec<usize> = members
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| rank_of_truth(&queries[i].vector, &bag_pool, pos))
            .collect();
        bags.push(ranks);
    }
    EvalReport::from_bags(direction, bag_size, &bags)
}

/// Embed a split with frozen parameters and run the bag protocol in both
/// directions on the same bags.
pub fn evaluate_bags(
    params: &EncoderParams,
    dataset: &Dataset,
    split: &[usize],
    bag_size: usize,
    n_bags: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if split.len() < 2 {
        return Err(Error::Contract(format!(
            "evaluation split has {} pairs, need at least 2",
            split.len()
        )));
    }
    if bag_size > split.len() {
        log::warn!("bag size {bag_size} exceeds the {} available pairs; clamping", split.len());
    }
    let bag_size = bag_size.min(split.len());
    let images = embed_pairs(params, dataset, split, Modality::Image)?;
    let recipes = embed_pairs(params, dataset, split, Modality::Recipe)?;
    Direction::BOTH
        .iter()
        .map(|&d| evaluate_embeddings(&images, &recipes, d, bag_size, n_bags, seed))
        .collect()
}

/// Plain-text table with one row per direction: MedR, R@1, R@5, R@10 as mean ± std.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(r) = reports.first() {
        out.push_str(&format!("bags: {}  bag size: {}\n", r.n_bags(), r.bag_size));
    }
    out.push_str(&format!(
        "{:<15} {:>15} {:>15} {:>15} {:>15}\n",
        "direction", "MedR", "R@1", "R@5", "R@10"
    ));
    let cell = |m: &MeanStd| format!("{:.1} ± {:.1}", m.mean, m.std);
    for r in reports {
        out.push_str(&format!(
            "{:<15} {:>15} {:>15} {:>15} {:>15}\n",
            r.direction.to_string(),
            cell(&r.summary.medr),
            cell(&r.summary.recall[&1]),
            cell(&r.summary.recall[&5]),
            cell(&r.summary.recall[&10]),
        ));
    }
    out
}
