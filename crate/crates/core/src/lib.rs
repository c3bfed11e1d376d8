//! Two-stage instruction tuning of a miniature decoder-only language model
//! for binary "will the user like this item?" recommendation.
//!
//! The pipeline, bottom to top:
//!
//! - [`corpus`] turns rating logs into fixed-length history windows with a
//!   like/dislike label, splits them 8:1:1 and draws K-shot subsets.
//! - [`promptgen`] renders those windows as instruction/answer text pairs and
//!   generates a closed family of general instruction tasks.
//! - [`tokenizer`] maps text to byte tokens and packs instruction/answer pairs.
//! - [`model`] is a small pre-norm causal transformer with LoRA adapters on
//!   the query and value projections.
//! - [`train`] holds the masked language-modeling loss, hand-written reverse
//!   mode gradients for the adapters, Adam, and the two-stage schedule.
//! - [`eval`] scores Yes/No preferences, computes AUC, and runs the K-shot,
//!   ablation and cross-domain protocols.
//! - [`experiment`] is the config-driven orchestration behind the `tallrec`
//!   binary.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod promptgen;
pub mod rng;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
