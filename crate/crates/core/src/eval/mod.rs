//! Yes/No preference scoring, AUC, and the experiment protocols.

mod auc;
mod protocols;
mod scoring;

pub use auc::{auc, auc_count, auc_scores, AucCount};
pub use protocols::{
    ablation_run, cross_domain_matrix, prepare_rec_samples, rec_training_set, run_eval, CrossDomainCell,
    CrossDomainGrid, DomainData, EvalResult, Protocol, TrainDomain, Variant,
};
pub use scoring::{score_from_logits, score_instance, score_sample, ScoredInstance};
