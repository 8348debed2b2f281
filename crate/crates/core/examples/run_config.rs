//! Load a run configuration from TOML, override the seed and print the
//! fully resolved document.
//!
//! ```text
//! cargo run --example run_config -- [path/to/config.toml] [seed]
//! ```

use crossmodal::config::RunConfig;

fn main() -> crossmodal::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml_str(include_str!("default.toml"))?,
    };
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(config.seed);
    let config = config.with_seed(seed);
    config.validate()?;
    print!("{}", config.to_toml_string()?);
    Ok(())
}
