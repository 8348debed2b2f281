//! Mine instance and semantic triplets from a hand-made batch of unit
//! vectors and show how the margin and the semantic weight change the loss.

use crossmodal::encoders::Modality;
use crossmodal::triplet::{select_triplets, BatchItem, MiningConfig, NegativeStrategy, TripletSource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit(angle: f64) -> Vec<f64> {
    vec![angle.cos(), angle.sin()]
}

fn main() -> crossmodal::Result<()> {
    // Four pairs on the unit circle: pairs 0 and 1 are class 0, pairs 2 and 3 class 1.
    let layout = [(0, 0.0, 0.2), (1, 1.4, 1.2), (2, 2.0, 2.3), (3, 2.6, 2.4)];
    let mut items = Vec::new();
    for (pair, img, rec) in layout {
        let class_id = Some((pair / 2) as u32);
        for (angle, modality) in [(img, Modality::Image), (rec, Modality::Recipe)] {
            items.push(BatchItem { vector: unit(angle), pair, class_id, modality, var: None });
        }
    }

    for strategy in [NegativeStrategy::All, NegativeStrategy::Hardest] {
        for (alpha, lambda_sem) in [(0.3, 1.0), (0.3, 0.0), (1.0, 1.0)] {
            let cfg = MiningConfig { alpha, lambda_sem, strategy };
            let (triplets, loss) = select_triplets(&items, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
            let count = |s: TripletSource| {
                let of: Vec<_> = triplets.iter().filter(|t| t.source == s).collect();
                (of.iter().filter(|t| t.is_active()).count(), of.len())
            };
            let (ia, it) = count(TripletSource::Instance);
            let (sa, st) = count(TripletSource::Semantic);
            println!(
                "{strategy:?} alpha {alpha} lambda {lambda_sem}: instance {ia}/{it} active, semantic {sa}/{st} active, loss {loss:.4}"
            );
        }
    }

    let cfg = MiningConfig { alpha: 0.3, lambda_sem: 1.0, strategy: NegativeStrategy::Hardest };
    let (triplets, _) = select_triplets(&items, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("\nactive hardest triplets (q, p, n):");
    for t in triplets.iter().filter(|t| t.is_active()) {
        let name = |i: usize| format!("{}{}", items[i].modality, items[i].pair);
        println!("  {:?} {} {} {}  hinge {:.4}", t.source, name(t.q), name(t.p), name(t.n), t.loss);
    }
    Ok(())
}
