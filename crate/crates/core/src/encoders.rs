//! Image and recipe branches mapping into the shared unit-sphere space.
//!
//! The image branch is a trainable affine projection of precomputed
//! backbone features. The recipe branch runs a bidirectional recurrent
//! pass over frozen ingredient word vectors and a sentence-level recurrent
//! pass over mean-pooled frozen instruction word vectors, concatenates the
//! two, and projects.
//!
//! The recurrent cell is `h_t = tanh(W [x_t; h_{t-1}] + b)` with `h_0 = 0`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamStore, Tape, Var};

pub type TokenId = u32;
pub type ClassId = u32;

pub const WORD_TABLE: &str = "word_table";
pub const INGR_FWD_W: &str = "ingredient_rnn.fwd.w";
pub const INGR_FWD_B: &str = "ingredient_rnn.fwd.b";
pub const INGR_BWD_W: &str = "ingredient_rnn.bwd.w";
pub const INGR_BWD_B: &str = "ingredient_rnn.bwd.b";
pub const SENT_W: &str = "sentence_rnn.w";
pub const SENT_B: &str = "sentence_rnn.b";
pub const RECIPE_PROJ_W: &str = "recipe_proj.w";
pub const RECIPE_PROJ_B: &str = "recipe_proj.b";
pub const IMAGE_PROJ_W: &str = "image_proj.w";
pub const IMAGE_PROJ_B: &str = "image_proj.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Recipe,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Recipe,
            Modality::Recipe => Modality::Image,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Recipe => "recipe",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub instance_id: String,
    /// Stand-in for backbone output.
    pub features: Vec<f64>,
    pub class_id: Option<ClassId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecipeSample {
    pub instance_id: String,
    pub ingredients: Vec<TokenId>,
    pub instructions: Vec<Vec<TokenId>>,
    pub class_id: Option<ClassId>,
}

impl RecipeSample {
    /// Check the structural invariants against a vocabulary size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.ingredients.is_empty() {
            return Err(Error::EmptyInput("recipe has no ingredients"));
        }
        if self.instructions.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput("recipe has an empty instruction sentence"));
        }
        let all = self.ingredients.iter().chain(self.instructions.iter().flatten());
        for &t in all {
            check_token(t, vocab_size)?;
        }
        Ok(())
    }
}

fn check_token(t: TokenId, vocab_size: usize) -> Result<()> {
    if t as usize >= vocab_size {
        return Err(Error::Vocabulary {
            token: t as usize,
            vocab_size,
        });
    }
    Ok(())
}

/// A unit vector in the shared space together with its origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub source_id: String,
    pub modality: Modality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub image_dim: usize,
    pub embed_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            word_dim: 32,
            hidden_dim: 32,
            image_dim: 64,
            embed_dim: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.vocab_size,
            self.word_dim,
            self.hidden_dim,
            self.image_dim,
            self.embed_dim,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Both branches' parameters plus their dimensions.
///
/// The word table is registered frozen; everything else is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    dims: ModelDims,
    store: ParamStore,
}

impl EncoderParams {
    /// Seeded initialization: word table uniform in `[-0.1, 0.1]`, weights
    /// uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let ModelDims {
            vocab_size: v,
            word_dim: dw,
            hidden_dim: dh,
            image_dim: di,
            embed_dim: de,
        } = dims;

        let mut uniform = |shape: &[usize], bound: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            DenseArray::new(shape.to_vec(), data).expect("positive dims")
        };
        let glorot = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        store.insert(WORD_TABLE, uniform(&[v, dw], 0.1), true)?;
        store.insert(INGR_FWD_W, uniform(&[dh, dw + dh], glorot(dw + dh)), false)?;
        store.insert(INGR_BWD_W, uniform(&[dh, dw + dh], glorot(dw + dh)), false)?;
        store.insert(SENT_W, uniform(&[dh, dw + dh], glorot(dw + dh)), false)?;
        store.insert(RECIPE_PROJ_W, uniform(&[de, 3 * dh], glorot(3 * dh)), false)?;
        store.insert(IMAGE_PROJ_W, uniform(&[de, di], glorot(di)), false)?;
        for name in [INGR_FWD_B, INGR_BWD_B, SENT_B] {
            store.insert(name, DenseArray::zeros(&[dh]), false)?;
        }
        store.insert(RECIPE_PROJ_B, DenseArray::zeros(&[de]), false)?;
        store.insert(IMAGE_PROJ_B, DenseArray::zeros(&[de]), false)?;
        Ok(Self { dims, store })
    }

    /// Rebuild from a loaded store, inferring dimensions from shapes.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let shape2 = |name: &str| -> Result<(usize, usize)> {
            match store.value(name)?.shape() {
                [a, b] => Ok((*a, *b)),
                s => Err(Error::Integrity(format!("{name} must be a matrix, has shape {s:?}"))),
            }
        };
        let (vocab_size, word_dim) = shape2(WORD_TABLE)?;
        let (embed_dim, image_dim) = shape2(IMAGE_PROJ_W)?;
        let (hidden_dim, _) = shape2(SENT_W)?;
        let dims = ModelDims {
            vocab_size,
            word_dim,
            hidden_dim,
            image_dim,
            embed_dim,
        };
        let expect: [(&str, Vec<usize>); 11] = [
            (WORD_TABLE, vec![vocab_size, word_dim]),
            (INGR_FWD_W, vec![hidden_dim, word_dim + hidden_dim]),
            (INGR_FWD_B, vec![hidden_dim]),
            (INGR_BWD_W, vec![hidden_dim, word_dim + hidden_dim]),
            (INGR_BWD_B, vec![hidden_dim]),
            (SENT_W, vec![hidden_dim, word_dim + hidden_dim]),
            (SENT_B, vec![hidden_dim]),
            (RECIPE_PROJ_W, vec![embed_dim, 3 * hidden_dim]),
            (RECIPE_PROJ_B, vec![embed_dim]),
            (IMAGE_PROJ_W, vec![embed_dim, image_dim]),
            (IMAGE_PROJ_B, vec![embed_dim]),
        ];
        for (name, shape) in &expect {
            let got = store.value(name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "{name} has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        if store.len() != expect.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} parameters, expected {}",
                store.len(),
                expect.len()
            )));
        }
        if !store.get(WORD_TABLE)?.frozen {
            return Err(Error::Integrity("word table must be frozen".into()));
        }
        Ok(Self { dims, store })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    fn word_vector(&self, t: TokenId) -> Result<&[f64]> {
        check_token(t, self.dims.vocab_size)?;
        let dw = self.dims.word_dim;
        let table = self.store.value(WORD_TABLE)?.data();
        let i = t as usize;
        Ok(&table[i * dw..(i + 1) * dw])
    }

    fn zero_hidden(&self, tape: &mut Tape) -> Var {
        tape.constant(DenseArray::zeros(&[self.dims.hidden_dim]))
    }

    /// One recurrent step `tanh(W [x; h] + b)`.
    fn cell(&self, tape: &mut Tape, w: &str, b: &str, x: Var, h: Var) -> Result<Var> {
        let w = tape.param(&self.store, w)?;
        let b = tape.param(&self.store, b)?;
        let xh = tape.concat(&[x, h])?;
        let pre = tape.affine(w, b, xh)?;
        Ok(tape.tanh(pre))
    }

    fn run_rnn(&self, tape: &mut Tape, w: &str, b: &str, inputs: impl Iterator<Item = Var>) -> Result<Var> {
        let mut h = self.zero_hidden(tape);
        for x in inputs {
            h = self.cell(tape, w, b, x, h)?;
        }
        Ok(h)
    }

    pub fn encode_image(&self, s: &ImageSample, tape: &mut Tape) -> Result<Var> {
        if s.features.len() != self.dims.image_dim {
            return Err(Error::dim(
                "encode_image",
                format!(
                    "image {} has {} features, model expects {}",
                    s.instance_id,
                    s.features.len(),
                    self.dims.image_dim
                ),
            ));
        }
        let x = tape.constant(DenseArray::vector(s.features.clone()));
        let w = tape.param(&self.store, IMAGE_PROJ_W)?;
        let b = tape.param(&self.store, IMAGE_PROJ_B)?;
        let y = tape.affine(w, b, x)?;
        tape.l2_normalize(y)
    }

    /// Forward and backward final hidden states, concatenated: `[2·D_h]`.
    pub fn encode_ingredients(&self, tokens: &[TokenId], tape: &mut Tape) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("ingredient sequence"));
        }
        let mut words = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let v = self.word_vector(t)?.to_vec();
            words.push(tape.constant(DenseArray::vector(v)));
        }
        let fwd = self.run_rnn(tape, INGR_FWD_W, INGR_FWD_B, words.iter().copied())?;
        let bwd = self.run_rnn(tape, INGR_BWD_W, INGR_BWD_B, words.iter().rev().copied())?;
        tape.concat(&[fwd, bwd])
    }

    /// Mean of the frozen word vectors of one sentence.
    pub fn sentence_vector(&self, sentence: &[TokenId]) -> Result<Vec<f64>> {
        if sentence.is_empty() {
            return Err(Error::EmptyInput("instruction sentence"));
        }
        let mut acc = vec![0.0; self.dims.word_dim];
        for &t in sentence {
            for (a, w) in acc.iter_mut().zip(self.word_vector(t)?) {
                *a += w;
            }
        }
        let k = sentence.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }

    /// Final hidden state of the sentence-level pass: `[D_h]`. No sentences
    /// leaves the initial zero state.
    pub fn encode_instructions(&self, sentences: &[Vec<TokenId>], tape: &mut Tape) -> Result<Var> {
        let mut inputs = Vec::with_capacity(sentences.len());
        for s in sentences {
            let v = self.sentence_vector(s)?;
            inputs.push(tape.constant(DenseArray::vector(v)));
        }
        self.run_rnn(tape, SENT_W, SENT_B, inputs.into_iter())
    }

    /// `l2_normalize(recipe_proj([ingredients; instructions]))`.
    pub fn encode_recipe(&self, s: &RecipeSample, tape: &mut Tape) -> Result<Var> {
        let u = self.encode_ingredients(&s.ingredients, tape)?;
        let v = self.encode_instructions(&s.instructions, tape)?;
        self.project_recipe(u, v, tape)
    }

    pub(crate) fn project_recipe(&self, ingredients: Var, instructions: Var, tape: &mut Tape) -> Result<Var> {
        let joint = tape.concat(&[ingredients, instructions])?;
        let w = tape.param(&self.store, RECIPE_PROJ_W)?;
        let b = tape.param(&self.store, RECIPE_PROJ_B)?;
        let y = tape.affine(w, b, joint)?;
        tape.l2_normalize(y)
    }

    /// Embed one ingredient alone: the instruction half of the projection
    /// input is zero.
    pub fn encode_single_ingredient(&self, token: TokenId, tape: &mut Tape) -> Result<Var> {
        let u = self.encode_ingredients(&[token], tape)?;
        let zero = self.zero_hidden(tape);
        self.project_recipe(u, zero, tape)
    }

    pub fn embed_image(&self, s: &ImageSample) -> Result<Embedding> {
        let mut tape = Tape::new();
        let v = self.encode_image(s, &mut tape)?;
        Ok(Embedding {
            vector: tape.value(v).data().to_vec(),
            source_id: s.instance_id.clone(),
            modality: Modality::Image,
        })
    }

    pub fn embed_recipe(&self, s: &RecipeSample) -> Result<Embedding> {
        let mut tape = Tape::new();
        let v = self.encode_recipe(s, &mut tape)?;
        Ok(Embedding {
            vector: tape.value(v).data().to_vec(),
            source_id: s.instance_id.clone(),
            modality: Modality::Recipe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab_size: 20,
            word_dim: 4,
            hidden_dim: 3,
            image_dim: 5,
            embed_dim: 4,
        }
    }

    fn value(tape: &Tape, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    fn recipe(ingredients: Vec<TokenId>, instructions: Vec<Vec<TokenId>>) -> RecipeSample {
        RecipeSample {
            instance_id: "r".into(),
            ingredients,
            instructions,
            class_id: None,
        }
    }

    #[test]
    fn identity_projection_normalizes() {
        let dims = ModelDims {
            image_dim: 4,
            embed_dim: 4,
            ..small_dims()
        };
        let mut p = EncoderParams::init(dims, 1).unwrap();
        p.store_mut().set_value(IMAGE_PROJ_W, DenseArray::identity(4)).unwrap();
        let s = ImageSample {
            instance_id: "a".into(),
            features: vec![3.0, 4.0, 0.0, 0.0],
            class_id: None,
        };
        let e = p.embed_image(&s).unwrap();
        let expect = [0.6, 0.8, 0.0, 0.0];
        for (a, b) in e.vector.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_image_weights_pass_normalized_bias() {
        let mut p = EncoderParams::init(small_dims(), 1).unwrap();
        p.store_mut().set_value(IMAGE_PROJ_W, DenseArray::zeros(&[4, 5])).unwrap();
        p.store_mut()
            .set_value(IMAGE_PROJ_B, DenseArray::vector(vec![0.0, 2.0, 0.0, 0.0]))
            .unwrap();
        for f in [[1.0, 2.0, 3.0, 4.0, 5.0], [-9.0, 0.0, 0.5, 0.0, 1.0]] {
            let s = ImageSample {
                instance_id: "a".into(),
                features: f.to_vec(),
                class_id: None,
            };
            assert_eq!(p.embed_image(&s).unwrap().vector, vec![0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn image_feature_length_mismatch() {
        let p = EncoderParams::init(small_dims(), 1).unwrap();
        let s = ImageSample {
            instance_id: "a".into(),
            features: vec![1.0; 3],
            class_id: None,
        };
        assert!(matches!(p.embed_image(&s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_token_halves_match_when_directions_share_weights() {
        // With identical forward/backward cells both halves see the same step.
        let mut p = EncoderParams::init(small_dims(), 2).unwrap();
        let fw = p.store().value(INGR_FWD_W).unwrap().clone();
        p.store_mut().set_value(INGR_BWD_W, fw).unwrap();
        let mut t = Tape::new();
        let out = p.encode_ingredients(&[7], &mut t).unwrap();
        let v = value(&t, out);
        assert_eq!(v[..3], v[3..]);
    }

    #[test]
    fn single_token_is_one_cell_step_each_way() {
        let p = EncoderParams::init(small_dims(), 2).unwrap();
        let mut t = Tape::new();
        let out = p.encode_ingredients(&[7], &mut t).unwrap();
        let got = value(&t, out);

        let x = p.word_vector(7).unwrap().to_vec();
        let step = |w: &str, b: &str| -> Vec<f64> {
            let w = p.store().value(w).unwrap();
            let b = p.store().value(b).unwrap().data();
            let n = w.shape()[1];
            let mut xh = x.clone();
            xh.extend([0.0; 3]);
            (0..3)
                .map(|i| {
                    let row = &w.data()[i * n..(i + 1) * n];
                    (b[i] + row.iter().zip(&xh).map(|(a, c)| a * c).sum::<f64>()).tanh()
                })
                .collect()
        };
        let mut expect = step(INGR_FWD_W, INGR_FWD_B);
        expect.extend(step(INGR_BWD_W, INGR_BWD_B));
        assert_eq!(got, expect);
    }

    #[test]
    fn reversing_two_tokens_swaps_halves_under_shared_direction_weights() {
        let mut p = EncoderParams::init(small_dims(), 5).unwrap();
        let fw = p.store().value(INGR_FWD_W).unwrap().clone();
        p.store_mut().set_value(INGR_BWD_W, fw).unwrap();
        let mut t = Tape::new();
        let ab = p.encode_ingredients(&[3, 9], &mut t).unwrap();
        let ba = p.encode_ingredients(&[9, 3], &mut t).unwrap();
        let (ab, ba) = (value(&t, ab), value(&t, ba));
        assert_eq!(ab[..3], ba[3..]);
        assert_eq!(ab[3..], ba[..3]);
        assert_ne!(ab[..3], ab[3..]);
    }

    #[test]
    fn out_of_range_token() {
        let p = EncoderParams::init(small_dims(), 1).unwrap();
        let mut t = Tape::new();
        let err = p.encode_ingredients(&[5, 23], &mut t).unwrap_err();
        assert!(matches!(err, Error::Vocabulary { token: 23, vocab_size: 20 }));
        assert!(matches!(p.encode_ingredients(&[], &mut t), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn degenerate_hierarchy_is_one_cell_step() {
        let p = EncoderParams::init(small_dims(), 3).unwrap();
        let mut t = Tape::new();
        let out = p.encode_instructions(&[vec![4]], &mut t).unwrap();
        let got = value(&t, out);

        let mut t2 = Tape::new();
        let x = t2.constant(DenseArray::vector(p.word_vector(4).unwrap().to_vec()));
        let h0 = p.zero_hidden(&mut t2);
        let h = p.cell(&mut t2, SENT_W, SENT_B, x, h0).unwrap();
        assert_eq!(got, value(&t2, h));
    }

    #[test]
    fn duplicated_tokens_keep_sentence_vector() {
        let p = EncoderParams::init(small_dims(), 3).unwrap();
        let a = p.sentence_vector(&[1, 2, 3]).unwrap();
        let b = p.sentence_vector(&[1, 1, 2, 2, 3, 3]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let mut t = Tape::new();
        let none = p.encode_instructions(&[], &mut t).unwrap();
        assert!(t.value(none).data().iter().all(|&v| v == 0.0));
        assert!(p.encode_instructions(&[vec![1], vec![]], &mut t).is_err());
    }

    #[test]
    fn instruction_order_matters() {
        let p = EncoderParams::init(small_dims(), 11).unwrap();
        let a = recipe(vec![1, 2], vec![vec![3, 4], vec![5], vec![6, 7]]);
        let b = recipe(vec![1, 2], vec![vec![6, 7], vec![5], vec![3, 4]]);
        assert_ne!(p.embed_recipe(&a).unwrap().vector, p.embed_recipe(&b).unwrap().vector);
    }

    #[test]
    fn recipe_is_projection_of_sub_encoders() {
        let p = EncoderParams::init(small_dims(), 4).unwrap();
        let r = recipe(vec![1, 5, 2], vec![vec![3, 4], vec![8]]);
        let mut t = Tape::new();
        let u = p.encode_ingredients(&r.ingredients, &mut t).unwrap();
        let v = p.encode_instructions(&r.instructions, &mut t).unwrap();
        let mut joint = value(&t, u);
        joint.extend(value(&t, v));
        let w = p.store().value(RECIPE_PROJ_W).unwrap();
        let b = p.store().value(RECIPE_PROJ_B).unwrap().data();
        let n = joint.len();
        let y: Vec<f64> = (0..4)
            .map(|i| b[i] + (0..n).map(|j| w.data()[i * n + j] * joint[j]).sum::<f64>())
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let got = p.embed_recipe(&r).unwrap().vector;
        for (g, e) in got.iter().zip(y.iter().map(|v| v / norm)) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn from_store_round_trip_infers_dims() {
        let p = EncoderParams::init(small_dims(), 8).unwrap();
        let q = EncoderParams::from_store(p.store().clone()).unwrap();
        assert_eq!(q.dims(), small_dims());
        assert_eq!(p, q);
    }
}
