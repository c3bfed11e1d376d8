//! Yes/No scores and rank AUC, including tied scores.
//!
//! ```text
//! cargo run --example auc
//! ```

use tallrec::eval::{auc_count, auc_scores, score_from_logits};

fn main() -> tallrec::Result<()> {
    // P(Yes) from the two answer logits
    for (z_yes, z_no) in [(2.0, 0.0), (0.0, 0.0), (-1.0, 3.0)] {
        println!("z_yes {z_yes:+.1}, z_no {z_no:+.1} -> {:.4}", score_from_logits(z_yes, z_no));
    }

    let scores = [0.9, 0.8, 0.8, 0.6, 0.4, 0.4, 0.1];
    let labels = [true, true, false, true, false, true, false];
    let count = auc_count(&scores, &labels)?;
    println!(
        "\n{} positives, {} negatives, 2U = {} -> AUC {:.4}",
        count.positives,
        count.negatives,
        count.twice_u,
        auc_scores(&scores, &labels)?
    );

    match auc_scores(&[0.3, 0.7], &[true, true]) {
        Ok(a) => println!("single class: {a}"),
        Err(e) => println!("single class: {e}"),
    }
    Ok(())
}
