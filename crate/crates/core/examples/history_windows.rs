//! Rating log to labeled history windows, an 8:1:1 split and a K-shot draw.
//!
//! ```text
//! cargo run --example history_windows
//! ```

use tallrec::corpus::{
    build_history_windows, read_interactions, sample_few_shot, split_dataset, Domain, RatingRange, Schema, WindowMode,
    WindowSpec, DEFAULT_RATIOS,
};
use tallrec::synthetic::{interaction_log, to_csv};

fn main() -> tallrec::Result<()> {
    let csv = to_csv(&interaction_log(Domain::Movie, 40, 4..=12, true, 7));
    let report = read_interactions(csv.as_bytes(), &Schema::movie_default(), RatingRange::MOVIE)?;
    println!("read {} interactions, skipped {} rows", report.records.len(), report.skipped());

    let spec = WindowSpec { window: 5, mode: WindowMode::Chronological, threshold: 3.0, domain: Domain::Movie };
    let windows = build_history_windows(&report.records, &spec, 0)?;
    println!(
        "{} instances ({} users and {} targets skipped)",
        windows.instances.len(),
        windows.users_skipped,
        windows.targets_skipped
    );

    let first = windows.instances.iter().find(|i| i.history.len() == spec.window).unwrap();
    println!("\nuser {} -> target {:?} ({:?})", first.user, first.target_text, first.label);
    for h in &first.history {
        println!("  {:?} {:?}", h.label, h.text);
    }

    let splits = split_dataset(&windows.instances, DEFAULT_RATIOS, 42)?;
    println!(
        "\nsplit: {} train, {} validation, {} test",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    let shots = sample_few_shot(&splits.train, 16, 0)?;
    let likes = shots.iter().filter(|s| s.label.is_like()).count();
    println!("16-shot draw: {likes} likes, {} dislikes", shots.len() - likes);
    Ok(())
}
