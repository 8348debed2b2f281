//! Command-line front end: `gen-data`, `train`, `eval` and `query`.
//!
//! Settings come from an optional TOML config (`--config`, see
//! [`crate::config`]) with flags taking precedence. Every command validates
//! its inputs before writing anything.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_jsonl, make_splits, save_jsonl, Dataset};
use crate::encoders::{ClassId, EncoderParams, Modality};
use crate::error::{Error, Result};
use crate::numerics::{load_checkpoint, save_checkpoint};
use crate::queries::{
    class_constrained_query, ingredient_query, multimodal_query, remove_ingredient, QueryKind, QueryPayload,
    QueryResults, QuerySpec,
};
use crate::retrieval::{evaluate_bags, render_table, EmbeddingIndex, EvalReport};
use crate::trainer::{fit, loss_history_csv, OptimizerKind};
use crate::triplet::{squared_distance, NegativeStrategy};

#[derive(Debug, Parser)]
#[command(name = "crossmodal", version, about = "Cross-modal image/recipe embeddings: data, training, evaluation, queries")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Log to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenData(GenDataArgs),
    /// Train both encoders and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the bag protocol.
    Eval(EvalArgs),
    /// Query the semantic space of a trained model.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset file (JSON lines).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Final checkpoint.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_sem: Option<f64>,
    /// all | hardest | random-one
    #[arg(long)]
    strategy: Option<NegativeStrategy>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Loss history CSV (epoch, mean_loss).
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    /// Directory for last.ckpt and best.ckpt during training.
    #[arg(long, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelInput {
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    input: ModelInput,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    bag_size: Option<usize>,
    #[arg(long)]
    bags: Option<usize>,
    /// Machine-readable report with per-bag values.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Number of results.
    #[arg(short, long, global = true)]
    k: Option<usize>,
    /// Print JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    mode: QueryMode,
}

#[derive(Debug, Subcommand)]
enum QueryMode {
    /// Retrieve with an item of the dataset as the query.
    Cross {
        #[arg(long, value_enum)]
        from: ModalityArg,
        #[arg(long)]
        id: String,
        /// Target modality; defaults to the other one.
        #[arg(long, value_enum)]
        to: Option<ModalityArg>,
    },
    /// Retrieve with the mean embedding of a set of ingredients.
    Ingredients {
        #[arg(long, value_delimiter = ',', required = true)]
        tokens: Vec<String>,
        /// Restrict results to this class name.
        #[arg(long)]
        class: Option<String>,
        #[arg(long, value_enum, default_value_t = ModalityArg::Image)]
        to: ModalityArg,
    },
    /// Remove an ingredient from a recipe and compare retrieval before and after.
    Remove {
        #[arg(long)]
        id: String,
        #[arg(long)]
        token: String,
        #[arg(long, value_enum, default_value_t = ModalityArg::Image)]
        to: ModalityArg,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Image,
    Recipe,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Recipe => Modality::Recipe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

/// Parse `argv` (program name first) and run the command.
///
/// Returns the process exit code: 0 on success, 2 on usage errors and 1
/// on runtime failures, with a diagnostic on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

fn execute(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(base, a),
        Command::Train(a) => train(base, a),
        Command::Eval(a) => eval(base, a),
        Command::Query(a) => query(base, a),
    }
}

fn required(path: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("missing {flag} (or paths.{key} in the config)")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn stdout_write(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn gen_data(base: RunConfig, a: GenDataArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(base.seed);
    let mut cfg = base.with_seed(seed);
    if let Some(n) = a.classes {
        cfg.synth.n_classes = n;
    }
    if let Some(n) = a.instances {
        cfg.synth.instances_per_class = n;
    }
    if let Some(x) = a.noise {
        cfg.synth.noise_std = x;
    }
    let out = required(a.out.or(cfg.paths.data.clone()), "--out", "data")?;
    cfg.validate()?;

    let ds = generate_synthetic(&cfg.synth)?;
    save_jsonl(&ds, &out)?;
    stdout_write(&format!(
        "wrote {} pairs ({} classes, {} tokens) to {}\n",
        ds.pairs.len(),
        ds.class_names.len(),
        ds.vocab.len(),
        out.display()
    ))
}

/// Load a dataset, check it against the model dimensions and split it.
fn prepare_dataset(cfg: &RunConfig, path: &Path, image_dim: usize, vocab_size: usize) -> Result<Dataset> {
    let ds = load_jsonl(path)?;
    if ds.pairs.is_empty() {
        return Err(Error::EmptyInput("dataset has no pairs"));
    }
    if let Some(d) = ds.image_dim() {
        if d != image_dim {
            return Err(Error::Config(format!(
                "{}: image features have {d} dimensions but the model expects {image_dim}",
                path.display()
            )));
        }
    }
    if ds.vocab.len() > vocab_size {
        return Err(Error::Config(format!(
            "{}: {} distinct tokens exceed the model vocabulary of {vocab_size}",
            path.display(),
            ds.vocab.len()
        )));
    }
    make_splits(&ds, cfg.split_fractions(), cfg.seed)
}

fn train(base: RunConfig, a: TrainArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(base.seed);
    let mut cfg = base.with_seed(seed);
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.lambda_sem {
        t.lambda_sem = v;
    }
    if let Some(v) = a.strategy {
        t.negative_strategy = v;
    }
    if let Some(v) = a.optimizer {
        t.optimizer = v;
    }
    let data = required(a.data.or(cfg.paths.data.clone()), "--data", "data")?;
    let out = required(a.out.or(cfg.paths.checkpoint.clone()), "--out", "checkpoint")?;
    let history = a.history.or(cfg.paths.history.clone());
    let checkpoint_dir = a.checkpoint_dir.or(cfg.paths.checkpoint_dir.clone());
    cfg.validate()?;

    let ds = prepare_dataset(&cfg, &data, cfg.model.image_dim, cfg.model.vocab_size)?;
    let params = EncoderParams::init(cfg.model, seed)?;
    let outcome = fit(&ds, params, &cfg.train, checkpoint_dir.as_deref())?;

    save_checkpoint(outcome.params.store(), &out)?;
    if let Some(path) = &history {
        write_file(path, &loss_history_csv(&outcome.history))?;
    }
    let mut report = String::new();
    for (i, loss) in outcome.history.iter().enumerate() {
        report.push_str(&format!("epoch {:>3}  loss {loss:.6}", i + 1));
        if let Some(m) = outcome.validation_medr.get(i) {
            report.push_str(&format!("  validation MedR {m:.1}"));
        }
        report.push('\n');
    }
    report.push_str(&format!(
        "{} steps, {} pairs seen; wrote {}\n",
        outcome.steps,
        outcome.pairs_seen,
        out.display()
    ));
    stdout_write(&report)
}

/// Resolve the dataset and checkpoint of an eval or query command.
fn load_model(base: RunConfig, input: ModelInput) -> Result<(RunConfig, Dataset, EncoderParams)> {
    let data = required(input.data.or(base.paths.data.clone()), "--data", "data")?;
    let model = required(input.model.or(base.paths.checkpoint.clone()), "--model", "checkpoint")?;
    let store = load_checkpoint(&model)?;
    let seed = input.seed.unwrap_or(store.rng_seed());
    let cfg = base.with_seed(seed);
    cfg.validate()?;
    let params = EncoderParams::from_store(store)?;
    let dims = params.dims();
    let ds = prepare_dataset(&cfg, &data, dims.image_dim, dims.vocab_size)?;
    Ok((cfg, ds, params))
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    split: SplitArg,
    pairs: usize,
    seed: u64,
    reports: &'a [EvalReport],
}

fn eval(base: RunConfig, a: EvalArgs) -> Result<()> {
    let out = a.out.or(base.paths.report.clone());
    let (mut cfg, ds, params) = load_model(base, a.input)?;
    if let Some(v) = a.bag_size {
        cfg.eval.bag_size = v;
    }
    if let Some(v) = a.bags {
        cfg.eval.n_bags = v;
    }
    cfg.validate()?;
    let ids = match a.split {
        SplitArg::Train => ds.splits.train.clone(),
        SplitArg::Validation => ds.splits.validation.clone(),
        SplitArg::Test => ds.splits.test.clone(),
        SplitArg::All => ds.all_indices(),
    };
    let reports = evaluate_bags(&params, &ds, &ids, cfg.eval.bag_size, cfg.eval.n_bags, cfg.seed)?;
    if let Some(path) = &out {
        let doc = EvalDocument {
            split: a.split,
            pairs: ids.len(),
            seed: cfg.seed,
            reports: &reports,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        text.push('\n');
        write_file(path, &text)?;
    }
    stdout_write(&render_table(&reports))
}

fn query(base: RunConfig, a: QueryArgs) -> Result<()> {
    let (cfg, ds, params) = load_model(base, a.input)?;
    let k = a.k.unwrap_or(cfg.eval.k);
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let all = ds.all_indices();
    let class_name = |c: ClassId| ds.class_names.get(c as usize).cloned().unwrap_or_else(|| c.to_string());
    let find = |id: &str| {
        ds.find(id)
            .ok_or_else(|| Error::Contract(format!("no pair with id {id:?} in the dataset")))
    };

    let text = match a.mode {
        QueryMode::Cross { from, id, to } => {
            let from = Modality::from(from);
            let to = to.map(Modality::from).unwrap_or(from.other());
            let pair = &ds.pairs[find(&id)?];
            let payload = match from {
                Modality::Image => QueryPayload::Image(pair.image.clone()),
                Modality::Recipe => QueryPayload::Recipe(pair.recipe.clone()),
            };
            let kind = if from == to {
                QueryKind::SameModal
            } else {
                QueryKind::CrossModal
            };
            let index = EmbeddingIndex::build(&params, &ds, &all, to)?;
            let spec = QuerySpec {
                kind,
                payload,
                target: to,
                k,
                class_filter: None,
            };
            let results = multimodal_query(&spec, &index, &params)?;
            if a.json {
                results.to_json() + "\n"
            } else {
                format!("{from} {id} -> {to}\n{}", results.render_table(class_name))
            }
        }
        QueryMode::Ingredients { tokens, class, to } => {
            let ids = tokens
                .iter()
                .map(|t| ds.vocab.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
                .collect::<Result<Vec<_>>>()?;
            let index = EmbeddingIndex::build(&params, &ds, &all, to.into())?;
            let results = match &class {
                None => ingredient_query(&ids, &index, &params, k)?,
                Some(name) => match ds.class_id(name) {
                    Some(c) => class_constrained_query(QueryPayload::Ingredients(ids), c, &index, &params, k)?,
                    None => QueryResults {
                        hits: Vec::new(),
                        empty_class: true,
                    },
                },
            };
            if a.json {
                results.to_json() + "\n"
            } else {
                let scope = class.map(|c| format!(" in class {c}")).unwrap_or_default();
                format!("ingredients [{}]{scope}\n{}", tokens.join(", "), results.render_table(class_name))
            }
        }
        QueryMode::Remove { id, token, to } => {
            let pair = &ds.pairs[find(&id)?];
            let t = ds.vocab.id(&token).ok_or_else(|| Error::UnknownToken(token.clone()))?;
            let original = &pair.recipe;
            let edited = remove_ingredient(original, t)?;
            let before = params.embed_recipe(original)?;
            let after = params.embed_recipe(&edited)?;
            let moved = squared_distance(&before.vector, &after.vector)?;
            let index = EmbeddingIndex::build(&params, &ds, &all, to.into())?;
            let rank = |payload| {
                let spec = QuerySpec {
                    kind: if Modality::from(to) == Modality::Recipe {
                        QueryKind::SameModal
                    } else {
                        QueryKind::CrossModal
                    },
                    payload,
                    target: to.into(),
                    k,
                    class_filter: None,
                };
                multimodal_query(&spec, &index, &params)
            };
            let r_before = rank(QueryPayload::Recipe(original.clone()))?;
            let r_after = rank(QueryPayload::Recipe(edited.clone()))?;
            if a.json {
                let doc = serde_json::json!({
                    "id": id,
                    "token": token,
                    "removed_ingredients": original.ingredients.len() - edited.ingredients.len(),
                    "removed_sentences": original.instructions.len() - edited.instructions.len(),
                    "squared_distance": moved,
                    "before": r_before.hits,
                    "after": r_after.hits,
                });
                serde_json::to_string_pretty(&doc).expect("json value serializes") + "\n"
            } else {
                format!(
                    "recipe {id} without {token:?}: {} ingredient(s) and {} sentence(s) removed, squared embedding distance {moved:.6}\nbefore\n{}after\n{}",
                    original.ingredients.len() - edited.ingredients.len(),
                    original.instructions.len() - edited.instructions.len(),
                    r_before.render_table(class_name),
                    r_after.render_table(class_name),
                )
            }
        }
    };
    stdout_write(&text)
}
