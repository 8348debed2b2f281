//! Encoder and trainer properties on small seeded models.

use crossmodal::data::{generate_synthetic, make_splits, Dataset, SynthConfig};
use crossmodal::encoders::{
    EncoderParams, ImageSample, Modality, ModelDims, RecipeSample, IMAGE_PROJ_W, INGR_FWD_W, RECIPE_PROJ_W, SENT_W,
    WORD_TABLE,
};
use crossmodal::numerics::Tape;
use crossmodal::retrieval::evaluate_bags;
use crossmodal::trainer::{fit, TrainConfig};
use proptest::prelude::*;

fn dims() -> ModelDims {
    ModelDims {
        vocab_size: 20,
        word_dim: 4,
        hidden_dim: 5,
        image_dim: 6,
        embed_dim: 3,
    }
}

fn recipe(ingredients: Vec<u32>, instructions: Vec<Vec<u32>>) -> RecipeSample {
    RecipeSample {
        instance_id: "r".into(),
        ingredients,
        instructions,
        class_id: None,
    }
}

fn small_dataset() -> Dataset {
    let cfg = SynthConfig {
        n_classes: 4,
        instances_per_class: 10,
        tokens_per_class: 4,
        image_dim: 8,
        ingredients_per_recipe: 3,
        sentences_per_recipe: 2,
        filler_tokens: 4,
        latent_axes: 3,
        modifiers_per_recipe: 1,
        max_vocab: 64,
        seed: 2,
        ..SynthConfig::default()
    };
    make_splits(&generate_synthetic(&cfg).unwrap(), (0.6, 0.2, 0.2), 2).unwrap()
}

fn small_model() -> EncoderParams {
    EncoderParams::init(
        ModelDims {
            vocab_size: 64,
            word_dim: 6,
            hidden_dim: 6,
            image_dim: 8,
            embed_dim: 5,
        },
        2,
    )
    .unwrap()
}

#[test]
fn image_encoder_golden_vector() {
    let p = EncoderParams::init(
        ModelDims {
            vocab_size: 4,
            word_dim: 3,
            hidden_dim: 3,
            image_dim: 8,
            embed_dim: 4,
        },
        42,
    )
    .unwrap();
    let s = ImageSample {
        instance_id: "g".into(),
        features: (0..8).map(|i| 0.25 * i as f64 - 0.8).collect(),
        class_id: None,
    };
    let golden = [
        -0.18046699512247222,
        -0.23222415640079716,
        -0.9551929722603641,
        0.03331652142428435,
    ];
    assert_eq!(p.embed_image(&s).unwrap().vector, golden);
}

#[test]
fn recipe_loss_reaches_recipe_weights_only() {
    let p = EncoderParams::init(dims(), 9).unwrap();
    let mut store = p.store().clone();
    let mut tape = Tape::new();
    let r = p.encode_recipe(&recipe(vec![1, 4, 7], vec![vec![2, 3], vec![5, 6, 8]]), &mut tape).unwrap();
    let c = tape.constant(crossmodal::numerics::DenseArray::vector(vec![0.3, -1.1, 0.7]));
    let prod = tape.mul(r, c).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss, 1.0, &mut store).unwrap();
    let norm = |name: &str| store.grad(name).unwrap().norm();
    for name in [INGR_FWD_W, SENT_W, RECIPE_PROJ_W] {
        assert!(norm(name) > 0.0, "{name} received no gradient");
    }
    assert_eq!(norm(WORD_TABLE), 0.0);
    assert_eq!(norm(IMAGE_PROJ_W), 0.0);
}

#[test]
fn training_keeps_word_table_and_history_is_sane() {
    let ds = small_dataset();
    let params = small_model();
    let initial = params.store().value(WORD_TABLE).unwrap().clone();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = fit(&ds, params, &cfg, None).unwrap();
    assert_eq!(out.params.store().value(WORD_TABLE).unwrap(), &initial);
    assert_eq!(out.history.len(), 3);
    assert!(out.history.iter().all(|l| l.is_finite() && *l >= 0.0));
}

#[test]
fn zero_learning_rate_leaves_metrics_unchanged() {
    let ds = small_dataset();
    let params = small_model();
    let before = evaluate_bags(&params, &ds, &ds.splits.test, 8, 3, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let out = fit(&ds, params.clone(), &cfg, None).unwrap();
    assert_eq!(out.params, params);
    assert_eq!(out.history[0], out.history[1]);
    assert_eq!(evaluate_bags(&out.params, &ds, &ds.splits.test, 8, 3, 1).unwrap(), before);
}

#[test]
fn training_is_bit_reproducible() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let a = fit(&ds, small_model(), &cfg, None).unwrap();
    let b = fit(&ds, small_model(), &cfg, None).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..20, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embeddings_are_unit_and_deterministic(
        seed in 0u64..1000,
        features in prop::collection::vec(-5.0f64..5.0, 6),
        ingredients in tokens(6),
        instructions in prop::collection::vec(tokens(5), 0..4),
    ) {
        let p = EncoderParams::init(dims(), seed).unwrap();
        let q = EncoderParams::init(dims(), seed).unwrap();
        let img = ImageSample { instance_id: "i".into(), features, class_id: None };
        let rec = recipe(ingredients, instructions);
        for (e, again) in [
            (p.embed_image(&img).unwrap(), q.embed_image(&img).unwrap()),
            (p.embed_recipe(&rec).unwrap(), q.embed_recipe(&rec).unwrap()),
        ] {
            let norm = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6);
            prop_assert_eq!(&e.vector, &again.vector);
        }
        prop_assert_eq!(p.embed_image(&img).unwrap().modality, Modality::Image);
    }
}
