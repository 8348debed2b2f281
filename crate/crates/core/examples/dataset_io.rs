//! Generate a synthetic dataset, write it as JSON lines, read it back and
//! split it into train, validation and test.

use crossmodal::data::{generate_synthetic, load_jsonl, make_splits, save_jsonl, SynthConfig};

fn main() -> crossmodal::Result<()> {
    let cfg = SynthConfig { n_classes: 4, instances_per_class: 5, seed: 11, ..SynthConfig::default() };
    let ds = generate_synthetic(&cfg)?;

    let dir = std::env::temp_dir().join(format!("crossmodal-dataset-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| crossmodal::Error::io(&dir, e))?;
    let path = dir.join("pairs.jsonl");
    save_jsonl(&ds, &path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| crossmodal::Error::io(&path, e))?;
    println!("{} ({} lines); first two:", path.display(), text.lines().count());
    for line in text.lines().take(2) {
        println!("  {}", if line.len() > 160 { format!("{}...", &line[..160]) } else { line.to_string() });
    }

    let back = load_jsonl(&path)?;
    println!("round trip identical records: {}", back.to_records() == ds.to_records());
    println!("vocabulary {} tokens, classes {:?}", back.vocab.len(), back.class_names);

    let split = make_splits(&back, (0.6, 0.2, 0.2), 11)?;
    let ids = |v: &[usize]| v.iter().map(|&i| split.pairs[i].instance_id().to_string()).collect::<Vec<_>>();
    println!("train      {:?}", ids(&split.splits.train));
    println!("validation {:?}", ids(&split.splits.validation));
    println!("test       {:?}", ids(&split.splits.test));

    std::fs::remove_dir_all(&dir).map_err(|e| crossmodal::Error::io(&dir, e))?;
    Ok(())
}
