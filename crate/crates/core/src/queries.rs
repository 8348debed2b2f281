//! Queries against a trained semantic space: cross- and same-modal
//! retrieval, ingredient-set queries, class-constrained search and
//! ingredient removal.

use serde::{Deserialize, Serialize};

use crate::encoders::{ClassId, EncoderParams, Embedding, Modality, RecipeSample, TokenId};
use crate::error::{Error, Result};
use crate::numerics::Tape;
use crate::retrieval::{rank_vector, EmbeddingIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    CrossModal,
    SameModal,
    IngredientSet,
    ClassConstrained,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryPayload {
    Image(crate::encoders::ImageSample),
    Recipe(RecipeSample),
    Ingredients(Vec<TokenId>),
    Embedding(Embedding),
}

impl QueryPayload {
    fn modality(&self) -> Modality {
        match self {
            QueryPayload::Image(_) => Modality::Image,
            QueryPayload::Recipe(_) | QueryPayload::Ingredients(_) => Modality::Recipe,
            QueryPayload::Embedding(e) => e.modality,
        }
    }

    fn id(&self) -> &str {
        match self {
            QueryPayload::Image(s) => &s.instance_id,
            QueryPayload::Recipe(s) => &s.instance_id,
            QueryPayload::Ingredients(_) => "",
            QueryPayload::Embedding(e) => &e.source_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub kind: QueryKind,
    pub payload: QueryPayload,
    pub target: Modality,
    pub k: usize,
    pub class_filter: Option<ClassId>,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Contract("query needs k >= 1".into()));
        }
        if self.class_filter.is_some() != (self.kind == QueryKind::ClassConstrained) {
            return Err(Error::Contract(
                "a class filter is required for, and only allowed with, class-constrained queries".into(),
            ));
        }
        let from = self.payload.modality();
        let ok = match self.kind {
            QueryKind::CrossModal => from != self.target,
            QueryKind::SameModal => from == self.target,
            QueryKind::IngredientSet => matches!(self.payload, QueryPayload::Ingredients(_)),
            QueryKind::ClassConstrained => true,
        };
        if !ok {
            return Err(Error::Contract(format!(
                "{:?} query cannot take a {from} payload towards {} items",
                self.kind, self.target
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub rank: usize,
    pub id: String,
    pub distance: f64,
    pub class_id: Option<ClassId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResults {
    pub hits: Vec<Hit>,
    /// Set when a class filter matched no index entry.
    pub empty_class: bool,
}

impl QueryResults {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.hits).expect("hits serialize")
    }

    /// Human-readable table; `class_name` resolves class ids.
    pub fn render_table(&self, class_name: impl Fn(ClassId) -> String) -> String {
        let mut s = format!("{:>4}  {:<12} {:>10}  {}\n", "rank", "id", "distance", "class");
        for h in &self.hits {
            let class = h.class_id.map(&class_name).unwrap_or_else(|| "-".into());
            s.push_str(&format!("{:>4}  {:<12} {:>10.6}  {}\n", h.rank, h.id, h.distance, class));
        }
        if self.empty_class {
            s.push_str("(no items in the requested class)\n");
        }
        s
    }
}

/// Embed a query payload with the matching branch.
pub fn embed_payload(payload: &QueryPayload, params: &EncoderParams) -> Result<Vec<f64>> {
    match payload {
        QueryPayload::Image(s) => Ok(params.embed_image(s)?.vector),
        QueryPayload::Recipe(s) => Ok(params.embed_recipe(s)?.vector),
        QueryPayload::Ingredients(tokens) => ingredient_vector(tokens, params),
        QueryPayload::Embedding(e) => Ok(e.vector.clone()),
    }
}

fn top_k(query_id: &str, vector: &[f64], index: &EmbeddingIndex, k: usize, class: Option<ClassId>) -> Result<QueryResults> {
    let ranked = rank_vector(query_id, vector, index)?;
    let mut hits = Vec::new();
    for (&i, &d) in ranked.order.iter().zip(&ranked.distances) {
        let e = &index.entries()[i];
        if class.is_some() && e.class_id != class {
            continue;
        }
        hits.push(Hit {
            rank: hits.len() + 1,
            id: e.id.clone(),
            distance: d,
            class_id: e.class_id,
        });
        if hits.len() == k {
            break;
        }
    }
    Ok(QueryResults {
        empty_class: class.is_some() && hits.is_empty(),
        hits,
    })
}

/// Nearest `k` items of the index's modality to the embedded payload.
pub fn multimodal_query(spec: &QuerySpec, index: &EmbeddingIndex, params: &EncoderParams) -> Result<QueryResults> {
    spec.validate()?;
    if index.modality() != spec.target {
        return Err(Error::Contract(format!(
            "query targets {} items but the index holds {}",
            spec.target,
            index.modality()
        )));
    }
    let vector = embed_payload(&spec.payload, params)?;
    top_k(spec.payload.id(), &vector, index, spec.k, spec.class_filter)
}

/// Query vector for an ingredient set: the normalized mean of each
/// distinct ingredient's single-token recipe-branch embedding.
///
/// Tokens are deduplicated and taken in id order, so the result ignores
/// both order and repetition in `tokens`.
pub fn ingredient_vector(tokens: &[TokenId], params: &EncoderParams) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Contract("ingredient query needs at least one token".into()));
    }
    let distinct: std::collections::BTreeSet<TokenId> = tokens.iter().copied().collect();
    let mut tape = Tape::new();
    let singles = distinct
        .iter()
        .map(|&t| params.encode_single_ingredient(t, &mut tape))
        .collect::<Result<Vec<_>>>()?;
    let mean = tape.mean(&singles)?;
    let q = tape.l2_normalize(mean)?;
    Ok(tape.value(q).data().to_vec())
}

pub fn ingredient_query(tokens: &[TokenId], index: &EmbeddingIndex, params: &EncoderParams, k: usize) -> Result<QueryResults> {
    let spec = QuerySpec {
        kind: QueryKind::IngredientSet,
        payload: QueryPayload::Ingredients(tokens.to_vec()),
        target: index.modality(),
        k,
        class_filter: None,
    };
    multimodal_query(&spec, index, params)
}

/// Rank only entries of `class_id`. An absent class yields an empty result
/// with [`QueryResults::empty_class`] set.
pub fn class_constrained_query(
    payload: QueryPayload,
    class_id: ClassId,
    index: &EmbeddingIndex,
    params: &EncoderParams,
    k: usize,
) -> Result<QueryResults> {
    let spec = QuerySpec {
        kind: QueryKind::ClassConstrained,
        payload,
        target: index.modality(),
        k,
        class_filter: Some(class_id),
    };
    multimodal_query(&spec, index, params)
}

/// Drop `token` from the ingredients and every instruction sentence that
/// mentions it.
pub fn remove_ingredient(recipe: &RecipeSample, token: TokenId) -> Result<RecipeSample> {
    let ingredients: Vec<TokenId> = recipe.ingredients.iter().copied().filter(|&t| t != token).collect();
    if ingredients.is_empty() {
        return Err(Error::DegenerateRecipe(format!(
            "removing token {token} leaves recipe {} without ingredients",
            recipe.instance_id
        )));
    }
    let instructions = recipe
        .instructions
        .iter()
        .filter(|s| !s.contains(&token))
        .cloned()
        .collect();
    Ok(RecipeSample {
        ingredients,
        instructions,
        ..recipe.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, PairRecord};
    use crate::encoders::ModelDims;

    fn tofu_saute() -> (Dataset, RecipeSample) {
        let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let rec = PairRecord {
            id: "tofu-saute".into(),
            class: Some("stir_fry".into()),
            image_features: vec![0.5, 0.5],
            ingredients: words("oregano zucchini tofu bell_pepper onions broccoli olive_oil"),
            instructions: vec![
                words("cut all ingredients into small pieces"),
                words("boil water and blanch the broccoli"),
                words("fry tofu in olive_oil with onions"),
                words("add broccoli and zucchini"),
            ],
        };
        let ds = Dataset::from_records(vec![rec]).unwrap();
        let r = ds.pairs[0].recipe.clone();
        (ds, r)
    }

    #[test]
    fn removing_broccoli() {
        let (ds, r) = tofu_saute();
        let broccoli = ds.vocab.id("broccoli").unwrap();
        let out = remove_ingredient(&r, broccoli).unwrap();
        let names: Vec<_> = out.ingredients.iter().map(|&t| ds.vocab.token(t).unwrap()).collect();
        assert_eq!(names, ["oregano", "zucchini", "tofu", "bell_pepper", "onions", "olive_oil"]);
        assert_eq!(out.instructions.len(), 2);
        assert!(out.instructions.iter().all(|s| !s.contains(&broccoli)));
        assert_eq!(remove_ingredient(&out, broccoli).unwrap(), out);
    }

    #[test]
    fn removing_absent_token_is_identity() {
        let (_, r) = tofu_saute();
        assert_eq!(remove_ingredient(&r, 9999).unwrap(), r);
    }

    #[test]
    fn removing_the_only_ingredient_fails() {
        let r = RecipeSample {
            instance_id: "x".into(),
            ingredients: vec![3, 3],
            instructions: vec![vec![1, 3]],
            class_id: None,
        };
        assert!(matches!(remove_ingredient(&r, 3), Err(Error::DegenerateRecipe(_))));
    }

    fn model() -> EncoderParams {
        EncoderParams::init(
            ModelDims {
                vocab_size: 30,
                word_dim: 5,
                hidden_dim: 4,
                image_dim: 3,
                embed_dim: 4,
            },
            17,
        )
        .unwrap()
    }

    fn recipe(id: &str, ingr: Vec<TokenId>, class: ClassId) -> RecipeSample {
        RecipeSample {
            instance_id: id.into(),
            instructions: vec![ingr.clone(), vec![1, 2]],
            ingredients: ingr,
            class_id: Some(class),
        }
    }

    fn recipe_index(p: &EncoderParams) -> (Vec<RecipeSample>, EmbeddingIndex) {
        let recipes: Vec<_> = (0..8)
            .map(|i| recipe(&format!("r{i}"), vec![3 + i, 12 + (i % 3)], if i < 3 { 0 } else { 1 + i % 2 }))
            .collect();
        let mut idx = EmbeddingIndex::new(Modality::Recipe, 4);
        for r in &recipes {
            idx.push_embedding(p.embed_recipe(r).unwrap(), r.class_id).unwrap();
        }
        (recipes, idx)
    }

    #[test]
    fn self_retrieval_and_clamping() {
        let p = model();
        let (recipes, idx) = recipe_index(&p);
        let spec = QuerySpec {
            kind: QueryKind::SameModal,
            payload: QueryPayload::Recipe(recipes[5].clone()),
            target: Modality::Recipe,
            k: 100,
            class_filter: None,
        };
        let res = multimodal_query(&spec, &idx, &p).unwrap();
        assert_eq!(res.hits.len(), 8);
        assert_eq!(res.hits[0].id, "r5");
        assert_eq!(res.hits[0].distance, 0.0);
        assert!(res.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn wrong_index_modality_is_rejected() {
        let p = model();
        let (recipes, idx) = recipe_index(&p);
        let spec = QuerySpec {
            kind: QueryKind::CrossModal,
            payload: QueryPayload::Recipe(recipes[0].clone()),
            target: Modality::Image,
            k: 3,
            class_filter: None,
        };
        assert!(multimodal_query(&spec, &idx, &p).is_err());
        let bad = QuerySpec {
            target: Modality::Recipe,
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ingredient_vector_examples() {
        let p = model();
        let mut tape = Tape::new();
        let single = p.encode_single_ingredient(7, &mut tape).unwrap();
        let single = tape.value(single).data().to_vec();
        let q = ingredient_vector(&[7], &p).unwrap();
        for (a, b) in q.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }
        let qq = ingredient_vector(&[7, 7], &p).unwrap();
        for (a, b) in q.iter().zip(&qq) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(ingredient_vector(&[], &p), Err(Error::Contract(_))));
        assert!(matches!(ingredient_vector(&[31], &p), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn class_filter_examples() {
        let p = model();
        let (recipes, idx) = recipe_index(&p);
        let payload = QueryPayload::Recipe(recipes[7].clone());
        let res = class_constrained_query(payload.clone(), 0, &idx, &p, 10).unwrap();
        assert_eq!(res.hits.len(), 3);
        assert!(res.hits.iter().all(|h| h.class_id == Some(0)));
        let none = class_constrained_query(payload.clone(), 42, &idx, &p, 10).unwrap();
        assert!(none.hits.is_empty() && none.empty_class);

        // subset of the unfiltered ranking, same relative order
        let full = multimodal_query(
            &QuerySpec {
                kind: QueryKind::SameModal,
                payload,
                target: Modality::Recipe,
                k: 100,
                class_filter: None,
            },
            &idx,
            &p,
        )
        .unwrap();
        let expect: Vec<_> = full.hits.iter().filter(|h| h.class_id == Some(0)).map(|h| h.id.clone()).collect();
        let got: Vec<_> = res.hits.iter().map(|h| h.id.clone()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn results_render() {
        let res = QueryResults {
            hits: vec![Hit {
                rank: 1,
                id: "a".into(),
                distance: 0.25,
                class_id: Some(2),
            }],
            empty_class: false,
        };
        let json: serde_json::Value = serde_json::from_str(&res.to_json()).unwrap();
        assert_eq!(json[0]["rank"], 1);
        assert_eq!(json[0]["class_id"], 2);
        assert!(res.render_table(|c| format!("class{c}")).contains("class2"));
    }
}
