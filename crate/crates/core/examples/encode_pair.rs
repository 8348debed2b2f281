//! Build an image/recipe pair by hand, embed both halves with freshly
//! initialized encoders and inspect the shared space.

use crossmodal::data::{Dataset, PairRecord};
use crossmodal::encoders::{EncoderParams, ModelDims};
use crossmodal::triplet::squared_distance;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> crossmodal::Result<()> {
    let record = PairRecord {
        id: "pancakes-1".into(),
        class: Some("breakfast".into()),
        image_features: vec![0.9, 0.1, -0.4, 0.3, 0.0, 0.2, -0.1, 0.5],
        ingredients: words("flour milk egg butter"),
        instructions: vec![words("whisk flour milk egg"), words("fry in butter")],
    };
    let ds = Dataset::from_records(vec![record])?;
    let dims = ModelDims { vocab_size: ds.vocab.len(), image_dim: 8, ..ModelDims::default() };
    let params = EncoderParams::init(dims, 42)?;
    let pair = &ds.pairs[0];

    let image = params.embed_image(&pair.image)?;
    let recipe = params.embed_recipe(&pair.recipe)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("model: {dims:?}, {} trainable entries", params.store().trainable_len());
    println!("image  embedding: dim {}, norm {:.6}", image.vector.len(), norm(&image.vector));
    println!("recipe embedding: dim {}, norm {:.6}", recipe.vector.len(), norm(&recipe.vector));
    println!("squared distance {:.4} (cosine {:.4})", squared_distance(&image.vector, &recipe.vector)?, 1.0 - squared_distance(&image.vector, &recipe.vector)? / 2.0);

    let mut no_steps = pair.recipe.clone();
    no_steps.instructions.clear();
    let e = params.embed_recipe(&no_steps)?;
    println!("same ingredients, no instructions: moved {:.4}", squared_distance(&e.vector, &recipe.vector)?.sqrt());
    Ok(())
}
