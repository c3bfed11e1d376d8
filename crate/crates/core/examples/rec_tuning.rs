//! Two-stage tuning on planted-keyword data: general instructions, then a
//! K-shot recommendation set, compared against each stage alone.
//!
//! ```text
//! cargo run --release --example rec_tuning
//! ```

use tallrec::corpus::Domain;
use tallrec::eval::{ablation_run, DomainData, Protocol, Variant};
use tallrec::model::{LoraConfig, ModelConfig};
use tallrec::promptgen::{generate_general_tasks, TemplateSet};
use tallrec::synthetic::planted_keyword_instances;
use tallrec::train::{Stage, TrainConfig};

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
            epochs: 8,
            patience: None,
            ..TrainConfig::new(Stage::Rec)
        },
        validation_cap: Some(32),
    };
    let data = DomainData {
        domain: Domain::Movie,
        train: planted_keyword_instances(Domain::Movie, 128, window, true, 100),
        validation: planted_keyword_instances(Domain::Movie, 32, window, true, 200),
        test: planted_keyword_instances(Domain::Movie, 100, window, true, 300),
    };

    let untrained = protocol.evaluate(&tallrec::model::init_model(protocol.model, protocol.base_seed)?, &data.test)?;
    println!("untrained backbone: AUC {:.3}", untrained.auc);
    for variant in Variant::ALL {
        let results = ablation_run(&protocol, &data, variant, 128, &[0])?;
        println!("{:>7} K=128: AUC {:.3}", variant.to_string(), results[0].auc);
    }
    Ok(())
}
