//! Train both encoders on the default synthetic dataset and compare
//! test-split retrieval before and after.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [lambda_sem]
//! ```

use crossmodal::data::{generate_synthetic, make_splits, SynthConfig};
use crossmodal::encoders::{EncoderParams, ModelDims};
use crossmodal::retrieval::{evaluate_bags, render_table};
use crossmodal::trainer::{fit, TrainConfig};

fn main() -> crossmodal::Result<()> {
    let mut args = std::env::args().skip(1);
    let defaults = TrainConfig::default();
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(defaults.epochs);
    let lambda_sem = args.next().and_then(|s| s.parse().ok()).unwrap_or(defaults.lambda_sem);

    let seed = 7;
    let ds = generate_synthetic(&SynthConfig { seed, ..SynthConfig::default() })?;
    let ds = make_splits(&ds, (0.8, 0.1, 0.1), seed)?;
    let params = EncoderParams::init(ModelDims::default(), seed)?;
    let test = &ds.splits.test;

    println!("untrained, {} test pairs", test.len());
    print!("{}", render_table(&evaluate_bags(&params, &ds, test, test.len(), 1, seed)?));

    let cfg = TrainConfig { epochs, lambda_sem, seed, ..defaults };
    let out = fit(&ds, params, &cfg, None)?;
    for (epoch, loss) in out.history.iter().enumerate() {
        let medr = out.validation_medr.get(epoch).copied().unwrap_or(f64::NAN);
        println!("epoch {:>3}  loss {loss:.4}  validation MedR {medr:.1}", epoch + 1);
    }

    println!("trained, best validation epoch {:?}", out.best_epoch);
    print!("{}", render_table(&evaluate_bags(&out.params, &ds, test, test.len(), 1, seed)?));
    Ok(())
}
