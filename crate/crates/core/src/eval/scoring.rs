use serde::{Deserialize, Serialize};

use crate::corpus::Preference;
use crate::error::{Error, Result};
use crate::model::{forward_rows, LanguageModel};
use crate::promptgen::{SampleKind, TuningSample, NO, YES};
use crate::tokenizer::{first_token, pack_prompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    /// Preference for "like", in `[0, 1]`.
    pub score: f64,
    pub label: Preference,
    /// Position of the instance in the evaluated list.
    pub index: usize,
}

/// Two-way softmax: `exp(z_yes) / (exp(z_yes) + exp(z_no))`.
pub fn score_from_logits(z_yes: f64, z_no: f64) -> f64 {
    1.0 / (1.0 + (z_no - z_yes).exp())
}

/// Preference score for a rec sample read off the first answer position.
///
/// Only the instruction input is fed to the model, so the expected output
/// never influences the score.
pub fn score_sample<M: LanguageModel + ?Sized>(model: &M, sample: &TuningSample) -> Result<f64> {
    if sample.kind != SampleKind::Rec {
        return Err(Error::Precondition("only rec samples can be scored".into()));
    }
    let prompt = pack_prompt(&sample.instruction_input);
    let last = prompt.len() - 1;
    let logits = forward_rows(model, &prompt.ids, &[last])?;
    let yes = first_token(YES).expect("non-empty") as usize;
    let no = first_token(NO).expect("non-empty") as usize;
    Ok(score_from_logits(logits[[0, yes]], logits[[0, no]]))
}

pub fn score_instance<M: LanguageModel + ?Sized>(
    model: &M,
    sample: &TuningSample,
    index: usize,
) -> Result<ScoredInstance> {
    let label = if sample.instruction_output == YES { Preference::Like } else { Preference::Dislike };
    Ok(ScoredInstance { score: score_sample(model, sample)?, label, index })
}
