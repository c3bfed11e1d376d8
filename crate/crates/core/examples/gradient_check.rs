//! Hand-written adapter gradients against central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use tallrec::corpus::{pad_history, Domain};
use tallrec::model::{attach_lora, init_model, LoraConfig, ModelConfig};
use tallrec::promptgen::{render_rec_sample, PromptTemplate};
use tallrec::synthetic::planted_keyword_instances;
use tallrec::tokenizer::pack_pair;
use tallrec::train::{grad, grad_check, randomize_adapters};

fn main() -> tallrec::Result<()> {
    let template = PromptTemplate::for_domain(Domain::Movie);
    let batch = planted_keyword_instances(Domain::Movie, 2, 3, true, 5)
        .iter()
        .map(|inst| Ok(pack_pair(&render_rec_sample(&pad_history(inst, 3)?, &template)?)))
        .collect::<tallrec::Result<Vec<_>>>()?;

    let cfg = ModelConfig { d_model: 32, n_heads: 4, d_ff: 64, ..ModelConfig::default() };
    let mut model = attach_lora(init_model(cfg, 0)?, &LoraConfig::default(), 1)?;
    randomize_adapters(&mut model, 0.1, 2)?;

    let out = grad(&model, &batch)?;
    println!("batch loss {:.4}", out.loss);

    let report = grad_check(&model, &batch, 1e-5, 20, 3)?;
    println!("{:>5} {:>6} {:>14} {:>14} {:>10}", "param", "index", "analytic", "numeric", "rel err");
    for c in &report.coords {
        println!("{:>5} {:>6} {:>14.6e} {:>14.6e} {:>10.2e}", c.param, c.index, c.analytic, c.numeric, c.rel_error);
    }
    println!("max relative error {:.2e}", report.max_rel_error);
    Ok(())
}
