//! Train on the synthetic dataset, then query the shared space:
//! cross-modal lookup, ingredient-set search and class-constrained search.

use crossmodal::data::{core_token, generate_synthetic, make_splits, SynthConfig};
use crossmodal::encoders::{EncoderParams, Modality, ModelDims};
use crossmodal::queries::{class_constrained_query, ingredient_query, multimodal_query, QueryKind, QueryPayload, QuerySpec};
use crossmodal::retrieval::EmbeddingIndex;
use crossmodal::trainer::{fit, TrainConfig};

fn main() -> crossmodal::Result<()> {
    let ds = make_splits(&generate_synthetic(&SynthConfig::default())?, (0.8, 0.1, 0.1), 7)?;
    let params = fit(&ds, EncoderParams::init(ModelDims::default(), 7)?, &TrainConfig::default(), None)?.params;
    let class_name = |c: u32| ds.class_names[c as usize].clone();

    let images = EmbeddingIndex::build(&params, &ds, &ds.all_indices(), Modality::Image)?;
    let test_images = EmbeddingIndex::build(&params, &ds, &ds.splits.test, Modality::Image)?;
    let query = &ds.pairs[ds.splits.test[0]];

    println!("recipe {} -> images", query.instance_id());
    let spec = QuerySpec {
        kind: QueryKind::CrossModal,
        payload: QueryPayload::Recipe(query.recipe.clone()),
        target: Modality::Image,
        k: 5,
        class_filter: None,
    };
    print!("{}", multimodal_query(&spec, &images, &params)?.render_table(class_name));

    let tokens = [core_token(3), core_token(7)];
    let ids: Vec<u32> = tokens.iter().map(|t| ds.vocab.require(t)).collect::<Result<_, _>>()?;
    println!("\ningredients {tokens:?} -> images");
    print!("{}", ingredient_query(&ids, &images, &params, 10)?.render_table(class_name));

    let target = (query.class_id().unwrap() + 1) % ds.class_names.len() as u32;
    println!("\nrecipe {} -> test images of class {}", query.instance_id(), class_name(target));
    let payload = QueryPayload::Recipe(query.recipe.clone());
    print!("{}", class_constrained_query(payload, target, &test_images, &params, 5)?.render_table(class_name));
    Ok(())
}
