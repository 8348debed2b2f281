//! Remove one ingredient from a recipe and watch where its embedding moves
//! among the images.

use crossmodal::data::{core_token, generate_synthetic, make_splits, SynthConfig};
use crossmodal::encoders::{EncoderParams, Modality, ModelDims};
use crossmodal::queries::{multimodal_query, remove_ingredient, QueryKind, QueryPayload, QuerySpec};
use crossmodal::retrieval::EmbeddingIndex;
use crossmodal::trainer::{fit, TrainConfig};
use crossmodal::triplet::squared_distance;

fn main() -> crossmodal::Result<()> {
    let ds = make_splits(&generate_synthetic(&SynthConfig::default())?, (0.8, 0.1, 0.1), 7)?;
    let params = fit(&ds, EncoderParams::init(ModelDims::default(), 7)?, &TrainConfig::default(), None)?.params;
    let images = EmbeddingIndex::build(&params, &ds, &ds.all_indices(), Modality::Image)?;
    let class_name = |c: u32| ds.class_names[c as usize].clone();

    let pair = &ds.pairs[ds.splits.test[0]];
    let class = pair.class_id().unwrap() as usize;
    let recipe = &pair.recipe;
    let names: Vec<&str> = recipe.ingredients.iter().filter_map(|&t| ds.vocab.token(t)).collect();
    println!("recipe {} ({}) ingredients {names:?}", recipe.instance_id, ds.class_names[class]);

    let lookup = |r: &crossmodal::encoders::RecipeSample| {
        let spec = QuerySpec {
            kind: QueryKind::CrossModal,
            payload: QueryPayload::Recipe(r.clone()),
            target: Modality::Image,
            k: 5,
            class_filter: None,
        };
        multimodal_query(&spec, &images, &params)
    };
    print!("{}", lookup(recipe)?.render_table(class_name));

    for token in [core_token(class), names[names.len() - 1].to_string()] {
        let id = ds.vocab.require(&token)?;
        let reduced = remove_ingredient(recipe, id)?;
        let moved = squared_distance(&params.embed_recipe(recipe)?.vector, &params.embed_recipe(&reduced)?.vector)?.sqrt();
        println!(
            "\nwithout {token}: {} ingredients, {} of {} sentences kept, embedding moved {moved:.4}",
            reduced.ingredients.len(),
            reduced.instructions.len(),
            recipe.instructions.len()
        );
        print!("{}", lookup(&reduced)?.render_table(class_name));
    }
    Ok(())
}
