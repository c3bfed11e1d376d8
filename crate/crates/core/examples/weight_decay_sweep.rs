//! Pick the weight decay with the best mean validation AUC over seeds.
//!
//! ```text
//! cargo run --release --example weight_decay_sweep [path/to/config.toml]
//! ```

use std::path::PathBuf;

use tallrec::corpus::Domain;
use tallrec::experiment::{cmd_prepare, cmd_sweep, ExperimentConfig, Workspace};

fn main() -> tallrec::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/tiny.toml"));
    let ws = Workspace::new(ExperimentConfig::load(&path)?)?;
    cmd_prepare(&ws)?;

    let report = cmd_sweep(&ws, Some(Domain::Movie))?;
    println!("{} at K = {} on {}", report.variant, report.k, report.domain);
    for row in &report.rows {
        println!("  weight_decay {:e} seed {}: {:.3}", row.weight_decay, row.seed, row.validation_auc);
    }
    for (wd, mean) in &report.means {
        println!("weight_decay {wd:e}: mean {mean:.3}");
    }
    println!("selected {:e}", report.selected);
    Ok(())
}
