//! The config-driven pipeline the `tallrec` binary runs: prepare, train and
//! evaluate every run in the grid, then aggregate over seeds. Finished runs
//! are reused on a second invocation.
//!
//! ```text
//! cargo run --release --example pipeline [path/to/config.toml]
//! ```

use std::path::PathBuf;

use tallrec::experiment::{cmd_experiment, plan, ExperimentConfig, Workspace};

fn main() -> tallrec::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/tiny.toml"));
    let ws = Workspace::new(ExperimentConfig::load(&path)?)?;
    println!("config {} -> {}", ws.config_hash, ws.root().display());
    println!("{} runs planned", plan(&ws.config).len());

    let report = cmd_experiment(&ws, |msg| eprintln!("  {msg}"))?;
    print!("\n{}", report.table(&ws.config_hash));
    Ok(())
}
