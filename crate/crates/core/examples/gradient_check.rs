//! Finite-difference check of the tape gradients, first on a small
//! composite expression and then on the full dual-source triplet loss.

use crossmodal::data::{generate_synthetic, SynthConfig};
use crossmodal::encoders::{EncoderParams, Modality, ModelDims};
use crossmodal::numerics::{grad_check, DenseArray, ParamStore, Tape};
use crossmodal::triplet::{mine_triplets, BatchItem, MiningConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> crossmodal::Result<()> {
    // sum(l2norm(tanh(W x + b)) * c)
    let mut store = ParamStore::new(0);
    store.insert("w", DenseArray::matrix(2, 3, vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6])?, false)?;
    store.insert("b", DenseArray::vector(vec![0.05, -0.1]), false)?;
    let expr = |s: &ParamStore, tape: &mut Tape| {
        let w = tape.param(s, "w")?;
        let b = tape.param(s, "b")?;
        let x = tape.constant(DenseArray::vector(vec![1.0, 2.0, -1.0]));
        let h = tape.affine(w, b, x)?;
        let h = tape.tanh(h);
        let h = tape.l2_normalize(h)?;
        let c = tape.constant(DenseArray::vector(vec![0.7, -0.3]));
        let hc = tape.mul(h, c)?;
        Ok(tape.sum(hc))
    };
    println!("composite expression: max relative error {:.2e}", grad_check(expr, &store, 1e-5)?);

    let synth = SynthConfig {
        n_classes: 2,
        instances_per_class: 2,
        tokens_per_class: 3,
        image_dim: 5,
        ingredients_per_recipe: 2,
        sentences_per_recipe: 2,
        filler_tokens: 2,
        latent_axes: 2,
        modifiers_per_recipe: 1,
        max_vocab: 12,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&synth)?;
    let dims = ModelDims { vocab_size: 12, word_dim: 3, hidden_dim: 3, image_dim: 5, embed_dim: 4 };
    let params = EncoderParams::init(dims, 1)?;
    let cfg = MiningConfig::default();
    let loss = |s: &ParamStore, tape: &mut Tape| {
        let p = EncoderParams::from_store(s.clone())?;
        let mut items = Vec::new();
        for (slot, pair) in ds.pairs.iter().enumerate() {
            let img = p.encode_image(&pair.image, tape)?;
            let rec = p.encode_recipe(&pair.recipe, tape)?;
            for (var, modality) in [(img, Modality::Image), (rec, Modality::Recipe)] {
                let vector = tape.value(var).data().to_vec();
                items.push(BatchItem { vector, pair: slot, class_id: pair.class_id(), modality, var: Some(var) });
            }
        }
        let mined = mine_triplets(tape, &items, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(mined.loss_var.unwrap_or_else(|| tape.constant(DenseArray::scalar(0.0))))
    };
    println!(
        "triplet loss over {} trainable entries: max relative error {:.2e}",
        params.store().trainable_len(),
        grad_check(loss, params.store(), 1e-5)?
    );
    Ok(())
}
