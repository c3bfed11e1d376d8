use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::grad::grad;
use super::loss::batch_loss;
use crate::error::{Error, Result};
use crate::eval::{auc_scores, score_sample};
use crate::model::{attach_lora, AdaptedModel, BaseWeights, LoraConfig};
use crate::promptgen::{SampleKind, TuningSample, YES};
use crate::rng::{seeded, Stream};
use crate::tokenizer::{pack_pair, TokenSequence};

/// Weight-decay values searched by the sweep.
pub const WEIGHT_DECAY_GRID: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    General,
    #[default]
    Rec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default = "defaults::patience")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stage: Stage,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        1e-5
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn epochs() -> usize {
        50
    }
    pub fn patience() -> Option<usize> {
        Some(10)
    }
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        TrainConfig {
            learning_rate: defaults::learning_rate(),
            weight_decay: defaults::weight_decay(),
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
            patience: defaults::patience(),
            max_steps: None,
            seed: 0,
            stage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a stage picks its best epoch.
#[derive(Debug, Clone, Default)]
pub enum Validation {
    /// Keep the last epoch.
    #[default]
    None,
    /// Lowest mean loss on these samples.
    Loss(Vec<TuningSample>),
    /// Highest AUC on these rec samples.
    Auc(Vec<TuningSample>),
}

#[derive(Debug, Clone, Default)]
pub struct StageData {
    pub train: Vec<TuningSample>,
    pub validation: Validation,
}

impl StageData {
    pub fn new(train: Vec<TuningSample>, validation: Validation) -> Self {
        StageData { train, validation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_auc: Option<f64>,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: Stage,
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose adapters were kept; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine<'a> {
    Step {
        stage: Stage,
        step: usize,
        loss: f64,
    },
    Epoch {
        stage: Stage,
        #[serde(flatten)]
        record: &'a EpochRecord,
    },
    Summary {
        stage: Stage,
        selected_epoch: Option<usize>,
        steps: usize,
        wall_clock_secs: f64,
    },
}

impl TrainLog {
    /// One JSON object per line: every step, every epoch, then a summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut emit = |line: LogLine| -> Result<()> {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<train log>", e))
        };
        for (i, &loss) in self.step_losses.iter().enumerate() {
            emit(LogLine::Step { stage: self.stage, step: i + 1, loss })?;
        }
        for record in &self.epochs {
            emit(LogLine::Epoch { stage: self.stage, record })?;
        }
        emit(LogLine::Summary {
            stage: self.stage,
            selected_epoch: self.selected_epoch,
            steps: self.step_losses.len(),
            wall_clock_secs: self.wall_clock_secs,
        })
    }
}

fn validation_labels(samples: &[TuningSample]) -> Result<Vec<bool>> {
    let labels: Vec<bool> = samples.iter().map(|s| s.instruction_output == YES).collect();
    if samples.iter().any(|s| s.kind != SampleKind::Rec) {
        return Err(Error::Precondition("AUC validation needs rec samples".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::UndefinedAuc { positives: pos, negatives: labels.len() - pos });
    }
    Ok(labels)
}

/// Mini-batch Adam over `data.train` for `cfg.epochs` epochs, returning the
/// adapters of the best epoch under the stage's validation rule.
pub fn run_stage(mut model: AdaptedModel, data: &StageData, cfg: &TrainConfig) -> Result<(AdaptedModel, TrainLog)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Precondition("a training stage needs at least one sample".into()));
    }
    let started = Instant::now();
    let mut log = TrainLog {
        stage: cfg.stage,
        step_losses: Vec::new(),
        epochs: Vec::new(),
        selected_epoch: None,
        wall_clock_secs: 0.0,
    };
    if cfg.epochs == 0 {
        return Ok((model, log));
    }

    let packed: Vec<TokenSequence> = data.train.iter().map(pack_pair).collect();
    let (val_packed, val_labels) = match &data.validation {
        Validation::None => (Vec::new(), Vec::new()),
        Validation::Loss(v) => (v.iter().map(pack_pair).collect(), Vec::new()),
        Validation::Auc(v) => (Vec::new(), validation_labels(v)?),
    };

    let mut state = AdamState::new(model.params());
    let mut rng = seeded(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..packed.len()).collect();
    let mut best: Option<(f64, usize, Vec<ndarray::Array2<f64>>)> = None;
    let mut steps = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| packed[i].clone()).collect();
            let out = grad(&model, &batch)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite { what: "loss".into(), step: steps + 1 });
            }
            adam_step(&mut model.params_mut(), &out.grads, &mut state, cfg.learning_rate, cfg.weight_decay)?;
            steps += 1;
            log.step_losses.push(out.loss);
            epoch_loss += out.loss;
            epoch_batches += 1;
        }
        if epoch_batches == 0 {
            break;
        }

        let mut record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / epoch_batches as f64,
            validation_auc: None,
            validation_loss: None,
        };
        // higher is better
        let score = match &data.validation {
            Validation::None => epoch as f64,
            Validation::Loss(_) => {
                let l = batch_loss(&model, &val_packed)?;
                record.validation_loss = Some(l);
                -l
            }
            Validation::Auc(v) => {
                let scores = v.iter().map(|s| score_sample(&model, s)).collect::<Result<Vec<_>>>()?;
                let auc = auc_scores(&scores, &val_labels)?;
                record.validation_auc = Some(auc);
                auc
            }
        };
        log.epochs.push(record);

        let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
        if improved {
            best = Some((score, epoch, model.params().into_iter().cloned().collect()));
        } else if let (Some(patience), Some((_, best_epoch, _))) = (cfg.patience, &best) {
            if epoch - best_epoch >= patience {
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    if let Some((_, epoch, params)) = best {
        for (p, kept) in model.params_mut().into_iter().zip(params) {
            *p = kept;
        }
        log.selected_epoch = Some(epoch);
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineLog {
    pub general: Option<TrainLog>,
    pub rec: Option<TrainLog>,
}

/// Attach adapters, tune on general instructions, then on rec samples, with
/// the same adapters throughout. A stage with no training samples is skipped.
pub fn tallrec_pipeline(
    base: BaseWeights,
    lora: &LoraConfig,
    lora_seed: u64,
    general: &StageData,
    rec: &StageData,
    cfg_general: &TrainConfig,
    cfg_rec: &TrainConfig,
) -> Result<(AdaptedModel, PipelineLog)> {
    let mut model = attach_lora(base, lora, lora_seed)?;
    let mut log = PipelineLog { general: None, rec: None };
    if !general.train.is_empty() {
        let (m, l) = run_stage(model, general, cfg_general)?;
        model = m;
        log.general = Some(l);
    }
    if !rec.train.is_empty() {
        let (m, l) = run_stage(model, rec, cfg_rec)?;
        model = m;
        log.rec = Some(l);
    }
    Ok((model, log))
}
