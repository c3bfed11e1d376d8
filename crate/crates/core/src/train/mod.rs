//! Masked conditional language-modeling loss, exact adapter gradients,
//! Adam with decoupled weight decay, and the two-stage tuning schedule.
//!
//! Only LoRA tensors receive gradients. The backward pass still flows
//! through every frozen matrix, but no gradient buffer is ever allocated for
//! a base tensor.

mod adam;
mod grad;
mod gradcheck;
mod loss;
mod stage;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use grad::{grad, sample_grad, GradOutput};
pub use gradcheck::{grad_check, grad_check_coords, randomize_adapters, relative_error, CoordCheck, GradCheckReport};
pub use loss::{batch_loss, lm_loss, sample_loss, supervised_rows};
pub use stage::{
    run_stage, tallrec_pipeline, EpochRecord, PipelineLog, Stage, StageData, TrainConfig, TrainLog, Validation,
    WEIGHT_DECAY_GRID,
};
