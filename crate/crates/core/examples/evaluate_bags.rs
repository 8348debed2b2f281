//! Bag-based retrieval evaluation: an untrained model sits near chance,
//! while the encoders' own ground truth (identical embeddings) ranks first.

use crossmodal::data::{generate_synthetic, SynthConfig};
use crossmodal::encoders::{EncoderParams, Modality, ModelDims};
use crossmodal::retrieval::{embed_pairs, evaluate_bags, evaluate_embeddings, median_rank, recall_at_k, render_table, Direction};

fn main() -> crossmodal::Result<()> {
    let synth = SynthConfig { n_classes: 100, instances_per_class: 20, max_vocab: 1024, seed: 3, ..SynthConfig::default() };
    let ds = generate_synthetic(&synth)?;
    let params = EncoderParams::init(ModelDims { vocab_size: 1024, ..ModelDims::default() }, 3)?;

    println!("untrained model, {} pairs, 10 bags of 1000", ds.pairs.len());
    print!("{}", render_table(&evaluate_bags(&params, &ds, &ds.all_indices(), 1000, 10, 3)?));

    let images = embed_pairs(&params, &ds, &ds.all_indices(), Modality::Image)?;
    let copies: Vec<_> = images
        .iter()
        .map(|e| crossmodal::encoders::Embedding { modality: Modality::Recipe, ..e.clone() })
        .collect();
    let oracle = evaluate_embeddings(&images, &copies, Direction::ImageToRecipe, 1000, 10, 3)?;
    println!("\nrecipe embeddings replaced by copies of the image embeddings");
    print!("{}", render_table(&[oracle]));

    let ranks = [1, 3, 2, 8, 1, 40];
    println!(
        "\nranks {ranks:?}: MedR {} R@1 {:.1}% R@5 {:.1}%",
        median_rank(&ranks)?,
        recall_at_k(&ranks, 1)?,
        recall_at_k(&ranks, 5)?
    );
    Ok(())
}
