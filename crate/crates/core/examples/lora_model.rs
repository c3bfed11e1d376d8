//! A frozen backbone with LoRA adapters on the query and value projections:
//! parameter counts, the zero-init no-op, merging and a checkpoint round trip.
//!
//! ```text
//! cargo run --example lora_model
//! ```

use tallrec::model::{
    attach_lora, count_trainable, forward, init_model, load_checkpoint, merge_lora, save_checkpoint, Checkpoint,
    LoraConfig, ModelConfig,
};
use tallrec::tokenizer::encode;
use tallrec::train::randomize_adapters;

fn max_abs_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> tallrec::Result<()> {
    let base = init_model(ModelConfig::default(), 0)?;
    let ids = encode("User's liked items: Ember (QZJX).").ids;
    let base_logits = forward(&base, &ids)?;

    let mut model = attach_lora(base, &LoraConfig::default(), 1)?;
    let count = count_trainable(&model);
    println!("trainable {} of {} parameters ({:.3}%)", count.trainable, count.total, 100.0 * count.fraction);
    println!("fresh adapters change logits by {:e}", max_abs_diff(&forward(&model, &ids)?, &base_logits));

    randomize_adapters(&mut model, 0.1, 2)?;
    let adapted = forward(&model, &ids)?;
    let merged = forward(&merge_lora(&model), &ids)?;
    println!(
        "after randomizing: shift {:.3}, merged vs unmerged {:e}",
        max_abs_diff(&adapted, &base_logits),
        max_abs_diff(&adapted, &merged)
    );

    let path = std::env::temp_dir().join("tallrec-lora-example.json");
    save_checkpoint(&path, &Checkpoint::from_model(&model))?;
    let restored = load_checkpoint(&path)?.into_model()?;
    println!("checkpoint round trip identical: {}", forward(&restored, &ids)? == adapted);
    std::fs::remove_file(&path).ok();
    Ok(())
}
