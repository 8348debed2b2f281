//! Paired image/recipe datasets: synthetic generation, line-delimited
//! JSON ingestion, vocabulary and splits.
//!
//! File format: the first line is a header `{"format":"crossmodal-pairs","schema_version":1}`;
//! each following line is one pair:
//!
//! ```text
//! {"id":"00017","class":"class03","image_features":[0.1,...],
//!  "ingredients":["tofu","broccoli"],"instructions":[["cut","tofu"],["boil","water"]]}
//! ```
//!
//! An empty file is an empty dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{ClassId, ImageSample, RecipeSample, TokenId};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "crossmodal-pairs";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Token string to id bijection, ids assigned densely from 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub image: ImageSample,
    pub recipe: RecipeSample,
}

impl Pair {
    pub fn instance_id(&self) -> &str {
        &self.image.instance_id
    }

    pub fn class_id(&self) -> Option<ClassId> {
        self.image.class_id
    }
}

/// Indices into [`Dataset::pairs`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub vocab: Vocab,
    pub class_names: Vec<String>,
    pub splits: Splits,
}

/// One line of the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    pub class: Option<String>,
    pub image_features: Vec<f64>,
    pub ingredients: Vec<String>,
    pub instructions: Vec<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    schema_version: u32,
}

impl Dataset {
    /// Build a dataset from records, assigning token and class ids in
    /// first-appearance order.
    pub fn from_records(records: Vec<PairRecord>) -> Result<Self> {
        let mut ds = Dataset::default();
        let mut classes: HashMap<String, ClassId> = HashMap::new();
        let mut seen = HashSet::new();
        let mut image_dim = None;
        for r in records {
            if !seen.insert(r.id.clone()) {
                return Err(Error::Integrity(format!("duplicate instance id {:?}", r.id)));
            }
            if r.ingredients.is_empty() {
                return Err(Error::Integrity(format!("{}: no ingredients", r.id)));
            }
            if r.instructions.iter().any(Vec::is_empty) {
                return Err(Error::Integrity(format!("{}: empty instruction sentence", r.id)));
            }
            if r.image_features.is_empty() || r.image_features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("{}: image features must be finite and nonempty", r.id)));
            }
            match image_dim {
                None => image_dim = Some(r.image_features.len()),
                Some(d) if d != r.image_features.len() => {
                    return Err(Error::Integrity(format!(
                        "{}: {} image features, earlier records have {d}",
                        r.id,
                        r.image_features.len()
                    )))
                }
                _ => {}
            }
            let class_id = r.class.as_ref().map(|name| {
                *classes.entry(name.clone()).or_insert_with(|| {
                    ds.class_names.push(name.clone());
                    (ds.class_names.len() - 1) as ClassId
                })
            });
            let ingredients = r.ingredients.iter().map(|t| ds.vocab.intern(t)).collect();
            let instructions = r
                .instructions
                .iter()
                .map(|s| s.iter().map(|t| ds.vocab.intern(t)).collect())
                .collect();
            ds.pairs.push(Pair {
                image: ImageSample {
                    instance_id: r.id.clone(),
                    features: r.image_features,
                    class_id,
                },
                recipe: RecipeSample {
                    instance_id: r.id,
                    ingredients,
                    instructions,
                    class_id,
                },
            });
        }
        Ok(ds)
    }

    pub fn to_records(&self) -> Vec<PairRecord> {
        let tok = |t: &TokenId| self.vocab.token(*t).unwrap_or_default().to_string();
        self.pairs
            .iter()
            .map(|p| PairRecord {
                id: p.instance_id().to_string(),
                class: p.class_id().map(|c| self.class_names[c as usize].clone()),
                image_features: p.image.features.clone(),
                ingredients: p.recipe.ingredients.iter().map(tok).collect(),
                instructions: p
                    .recipe
                    .instructions
                    .iter()
                    .map(|s| s.iter().map(tok).collect())
                    .collect(),
            })
            .collect()
    }

    pub fn image_dim(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.image.features.len())
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|c| c == name).map(|i| i as ClassId)
    }

    pub fn find(&self, instance_id: &str) -> Option<usize> {
        self.pairs.iter().position(|p| p.instance_id() == instance_id)
    }

    pub fn split(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.splits.train,
            SplitName::Validation => &self.splits.validation,
            SplitName::Test => &self.splits.test,
        }
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.pairs.len()).collect()
    }
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    let header = Header {
        format: DATASET_FORMAT.into(),
        schema_version: DATASET_SCHEMA_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    for r in dataset.to_records() {
        writeln!(out, "{}", serde_json::to_string(&r).expect("record serializes")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else {
        return Ok(Dataset::default());
    };
    let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        message: format!("expected schema header: {e}"),
    })?;
    if header.format != DATASET_FORMAT || header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "unsupported header {:?} version {}",
                header.format, header.schema_version
            ),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let r: PairRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(r);
    }
    Dataset::from_records(records)
}

/// Seeded shuffle then contiguous partition into train/validation/test.
///
/// Items are shuffled within each class and interleaved one class at a
/// time, so each contiguous block is close to class-stratified and every
/// class with at least three members lands in train.
pub fn make_splits(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let n = dataset.pairs.len();
    if n < 3 {
        return Err(Error::Contract(format!("cannot split a dataset of {n} pairs")));
    }
    let (ft, fv, fs) = fractions;
    let fr = [ft, fv, fs];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || ft + fv + fs > 1.0 + 1e-9 {
        return Err(Error::Contract(format!("invalid split fractions {fractions:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Option<ClassId>, Vec<usize>> = BTreeMap::new();
    for (i, p) in dataset.pairs.iter().enumerate() {
        groups.entry(p.class_id()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    for g in groups.iter_mut() {
        g.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(n);
    let rounds = groups.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..rounds {
        let mut round: Vec<usize> = groups.iter().filter_map(|g| g.get(r).copied()).collect();
        round.shuffle(&mut rng);
        order.extend(round);
    }

    let count = |f: f64| ((f * n as f64).round() as usize).min(n);
    let n_train = count(ft);
    let n_val = count(fv).min(n - n_train);
    let n_test = count(fs).min(n - n_train - n_val);

    let mut out = dataset.clone();
    out.splits = Splits {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..n_train + n_val + n_test].to_vec(),
    };
    Ok(out)
}

/// Controls for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub instances_per_class: usize,
    /// Signature vocabulary per class.
    pub tokens_per_class: usize,
    /// Standard deviation of the per-instance latent offset.
    pub noise_std: f64,
    /// Fraction of each class signature drawn from a pool shared across classes.
    pub shared_vocab_fraction: f64,
    pub image_dim: usize,
    /// Signature tokens per recipe, core token included.
    pub ingredients_per_recipe: usize,
    pub sentences_per_recipe: usize,
    /// Generic instruction words shared by every class.
    pub filler_tokens: usize,
    /// Size of the modifier pool; each modifier token owns one orthogonal latent direction.
    pub latent_axes: usize,
    /// Modifier tokens per recipe, chosen by the instance's latent offset.
    pub modifiers_per_recipe: usize,
    /// Upper bound on the generated vocabulary.
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            instances_per_class: 50,
            tokens_per_class: 8,
            noise_std: 0.05,
            shared_vocab_fraction: 0.3,
            image_dim: 64,
            ingredients_per_recipe: 5,
            sentences_per_recipe: 4,
            filler_tokens: 16,
            latent_axes: 8,
            modifiers_per_recipe: 2,
            max_vocab: 512,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 || self.instances_per_class < 2 {
            return bad(format!(
                "need at least 2 classes and 2 instances per class, got {} x {}",
                self.n_classes, self.instances_per_class
            ));
        }
        if self.tokens_per_class == 0
            || self.image_dim == 0
            || self.sentences_per_recipe == 0
            || self.latent_axes == 0
        {
            return bad("tokens_per_class, image_dim, sentences_per_recipe and latent_axes must be positive".into());
        }
        if self.ingredients_per_recipe == 0 || self.ingredients_per_recipe > self.tokens_per_class {
            return bad(format!(
                "ingredients_per_recipe must be in 1..={}, got {}",
                self.tokens_per_class, self.ingredients_per_recipe
            ));
        }
        if self.modifiers_per_recipe > self.latent_axes || self.latent_axes > self.image_dim {
            return bad(format!(
                "need modifiers_per_recipe <= latent_axes <= image_dim, got {} / {} / {}",
                self.modifiers_per_recipe, self.latent_axes, self.image_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_vocab_fraction) {
            return bad(format!("shared_vocab_fraction {} not in [0, 1]", self.shared_vocab_fraction));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        let (unique, _) = self.signature_split();
        let needed = self.n_classes * unique + self.shared_pool_size() + self.latent_axes + self.filler_tokens;
        if needed > self.max_vocab {
            return bad(format!(
                "configuration needs {needed} tokens but the vocabulary is capped at {}",
                self.max_vocab
            ));
        }
        Ok(())
    }

    /// (class-unique, shared) signature token counts; at least one unique.
    fn signature_split(&self) -> (usize, usize) {
        let k = self.tokens_per_class;
        let unique = (((1.0 - self.shared_vocab_fraction) * k as f64).round() as usize).clamp(1, k);
        (unique, k - unique)
    }

    fn shared_pool_size(&self) -> usize {
        let (_, shared) = self.signature_split();
        if shared == 0 {
            0
        } else {
            shared.max(self.tokens_per_class)
        }
    }
}

/// Modifier tokens are shared by every class and never belong to a signature.
pub fn is_modifier_token(token: &str) -> bool {
    token.starts_with("mod") && token[3..].bytes().all(|b| b.is_ascii_digit())
}

/// Token naming used by the generator.
pub fn core_token(class: usize) -> String {
    format!("c{class:02}_sig0")
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `n` orthonormal directions in `dim` dimensions (Gram-Schmidt on Gaussian draws).
fn orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = random_unit(rng, dim);
        for u in &out {
            let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Class prototypes: seeded unit vectors with pairwise distance ≥ 0.5.
fn prototypes<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {n} prototypes at distance 0.5 in {dim} dimensions"
            )));
        }
        let v = random_unit(rng, dim);
        let far = out.iter().all(|p| {
            p.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= 0.5
        });
        if far {
            out.push(v);
        }
    }
    Ok(out)
}

/// Generate a labeled paired dataset with class and instance structure.
///
/// Each class has a prototype image direction and a signature token set
/// whose first token (its core ingredient) appears in every recipe of the
/// class. A pool of `latent_axes` modifier tokens `modNN` is shared by all
/// classes, each tied to one orthonormal direction `a_k`. Each instance draws
/// `z ~ N(0, noise_std² I)`: its image features are `prototype + z`, and its
/// ingredients are the core token, a random sample of the other signature
/// tokens, then the `modifiers_per_recipe` modifiers with the highest
/// `a_k · z` in descending order. Instructions are short sentences mixing
/// filler words with the chosen ingredients.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.image_dim;
    let protos = prototypes(&mut rng, cfg.n_classes, dim)?;

    let (unique, shared) = cfg.signature_split();
    let shared_pool: Vec<String> = (0..cfg.shared_pool_size()).map(|j| format!("shared{j:02}")).collect();
    let filler: Vec<String> = (0..cfg.filler_tokens).map(|j| format!("step{j:02}")).collect();

    let mut signatures: Vec<Vec<String>> = Vec::with_capacity(cfg.n_classes);
    for c in 0..cfg.n_classes {
        let mut sig: Vec<String> = (0..unique).map(|j| format!("c{c:02}_sig{j}")).collect();
        let mut pool = shared_pool.clone();
        pool.shuffle(&mut rng);
        sig.extend(pool.into_iter().take(shared));
        signatures.push(sig);
    }

    let axes = orthonormal(&mut rng, cfg.latent_axes, dim);
    let modifiers: Vec<String> = (0..cfg.latent_axes).map(|a| format!("mod{a:02}")).collect();

    let normal = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut records = Vec::with_capacity(cfg.n_classes * cfg.instances_per_class);
    for (c, sig) in signatures.iter().enumerate() {
        for i in 0..cfg.instances_per_class {
            let z: Vec<f64> = if cfg.noise_std > 0.0 {
                (0..dim).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; dim]
            };
            let image_features = protos[c].iter().zip(&z).map(|(p, n)| p + n).collect();

            let mut ingredients = vec![sig[0].clone()];
            ingredients.extend(
                sig[1..]
                    .choose_multiple(&mut rng, cfg.ingredients_per_recipe - 1)
                    .cloned(),
            );
            let mut scored: Vec<(f64, usize)> = axes
                .iter()
                .enumerate()
                .map(|(k, a)| (a.iter().zip(&z).map(|(a, b)| a * b).sum(), k))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            ingredients.extend(
                scored
                    .iter()
                    .take(cfg.modifiers_per_recipe)
                    .map(|&(_, k)| modifiers[k].clone()),
            );

            let l = ingredients.len();
            let instructions = (0..cfg.sentences_per_recipe)
                .map(|s| {
                    let mut sentence = Vec::with_capacity(4);
                    if let Some(w) = filler.choose(&mut rng) {
                        sentence.push(w.clone());
                    }
                    sentence.push(ingredients[(2 * s) % l].clone());
                    if l > 1 {
                        sentence.push(ingredients[(2 * s + 1) % l].clone());
                    }
                    if let Some(w) = filler.choose(&mut rng) {
                        sentence.push(w.clone());
                    }
                    sentence
                })
                .collect();

            records.push(PairRecord {
                id: format!("{:05}", c * cfg.instances_per_class + i),
                class: Some(format!("class{c:02}")),
                image_features,
                ingredients,
                instructions,
            });
        }
    }
    Dataset::from_records(records)
}
