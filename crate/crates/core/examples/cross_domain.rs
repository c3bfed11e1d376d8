//! Train on movies, books or both, and test every model on both domains.
//!
//! ```text
//! cargo run --release --example cross_domain
//! ```

use tallrec::corpus::Domain;
use tallrec::eval::{cross_domain_matrix, DomainData, Protocol};
use tallrec::model::{LoraConfig, ModelConfig};
use tallrec::promptgen::{generate_general_tasks, TemplateSet};
use tallrec::synthetic::planted_keyword_instances;
use tallrec::train::{Stage, TrainConfig};

fn domain_data(domain: Domain, seed: u64, window: usize) -> DomainData {
    DomainData {
        domain,
        train: planted_keyword_instances(domain, 128, window, true, seed),
        validation: planted_keyword_instances(domain, 32, window, true, seed + 10),
        test: planted_keyword_instances(domain, 100, window, true, seed + 20),
    }
}

fn main() -> tallrec::Result<()> {
    let window = 5;
    let protocol = Protocol {
        model: ModelConfig { d_model: 32, n_layers: 2, n_heads: 4, d_ff: 128, ..ModelConfig::default() },
        base_seed: 0,
        lora: LoraConfig::default(),
        window,
        templates: TemplateSet::default(),
        general: generate_general_tasks(128, 7),
        general_validation: Vec::new(),
        train_general: TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            epochs: 2,
            patience: None,
            ..TrainConfig::new(Stage::General)
        },
        train_rec: TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            epochs: 10,
            patience: None,
            ..TrainConfig::new(Stage::Rec)
        },
        validation_cap: Some(32),
    };
    let movie = domain_data(Domain::Movie, 100, window);
    let book = domain_data(Domain::Book, 200, window);

    let grid = cross_domain_matrix(&protocol, &movie, &book, 64, &[0])?;
    for (td, n) in &grid.train_sizes {
        println!("train {td}: {n} instances");
    }
    println!("\n{:<8} {:>14} {:>14}", "train", "test movie", "test book");
    for row in grid.cells.chunks(2) {
        let cell = |c: &tallrec::eval::CrossDomainCell| format!("{:.3} ± {:.3}", c.mean_auc, c.std_auc);
        println!("{:<8} {:>14} {:>14}", row[0].train_domain.to_string(), cell(&row[0]), cell(&row[1]));
    }
    Ok(())
}
