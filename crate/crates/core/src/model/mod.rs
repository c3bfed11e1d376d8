//! Miniature pre-norm causal transformer with LoRA adapters.
//!
//! Weight matrices use the `(d_out, d_in)` convention: a row vector `x` maps
//! to `x · Wᵀ`. An adapter on `W` contributes `(alpha / rank) · B · A` with
//! `A: (rank, d_in)` and `B: (d_out, rank)`; `B` starts at zero so a freshly
//! attached adapter is an exact no-op.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub(crate) use forward::gelu_grad;
pub(crate) use forward::trace_rows;
pub use forward::{forward, forward_rows, softmax_row, trace, ForwardTrace, LayerTrace, NormTrace};

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng, Stream};
use crate::tokenizer::VOCAB_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, max_seq: 512, vocab: VOCAB_SIZE }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab < VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab {} is smaller than the byte vocabulary {VOCAB_SIZE}",
                self.vocab
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Parameter count of the base model.
    pub fn base_param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 2 * d * self.d_ff + self.d_ff + d + 4 * d;
        self.vocab * d + self.max_seq * d + self.n_layers * per_layer + 2 * d + self.vocab * d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    /// `(d_ff, d_model)`
    pub w_up: Array2<f64>,
    pub b_up: Array1<f64>,
    /// `(d_model, d_ff)`
    pub w_down: Array2<f64>,
    pub b_down: Array1<f64>,
}

/// Frozen backbone weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    /// `(vocab, d_model)`
    pub output: Array2<f64>,
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn sinusoidal(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(p, j)| {
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / cols as f64);
        let angle = p as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Scaled-normal initialization: `N(0, 1/fan_in)` for projections, unit
/// normal token embeddings, ones/zeros for norms and biases.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<BaseWeights> {
    config.validate()?;
    let mut rng = seeded(seed, Stream::ModelInit);
    let d = config.d_model;
    let f = config.d_ff;
    let proj = 1.0 / (d as f64).sqrt();
    let token_embedding = normal_matrix(&mut rng, config.vocab, d, 1.0);
    let position_embedding = sinusoidal(config.max_seq, d);
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            wq: normal_matrix(&mut rng, d, d, proj),
            wk: normal_matrix(&mut rng, d, d, proj),
            wv: normal_matrix(&mut rng, d, d, proj),
            wo: normal_matrix(&mut rng, d, d, proj),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
            w_up: normal_matrix(&mut rng, f, d, proj),
            b_up: Array1::zeros(f),
            w_down: normal_matrix(&mut rng, d, f, 1.0 / (f as f64).sqrt()),
            b_down: Array1::zeros(d),
        })
        .collect();
    let output = normal_matrix(&mut rng, config.vocab, d, proj);
    Ok(BaseWeights {
        config,
        token_embedding,
        position_embedding,
        layers,
        final_gain: Array1::ones(d),
        final_bias: Array1::zeros(d),
        output,
    })
}

impl BaseWeights {
    /// Every tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("weights are stored contiguously")
        }
        let mut out = vec![
            ("token_embedding".to_string(), flat(&self.token_embedding)),
            ("position_embedding".to_string(), flat(&self.position_embedding)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let tensors: [(&str, &[f64]); 12] = [
                ("ln1_gain", flat(&l.ln1_gain)),
                ("ln1_bias", flat(&l.ln1_bias)),
                ("wq", flat(&l.wq)),
                ("wk", flat(&l.wk)),
                ("wv", flat(&l.wv)),
                ("wo", flat(&l.wo)),
                ("ln2_gain", flat(&l.ln2_gain)),
                ("ln2_bias", flat(&l.ln2_bias)),
                ("w_up", flat(&l.w_up)),
                ("b_up", flat(&l.b_up)),
                ("w_down", flat(&l.w_down)),
                ("b_down", flat(&l.b_down)),
            ];
            out.extend(tensors.into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("final_gain".into(), flat(&self.final_gain)));
        out.push(("final_bias".into(), flat(&self.final_bias)));
        out.push(("output".into(), flat(&self.output)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over the bit patterns of every tensor, per tensor.
    pub fn tensor_checksums(&self) -> Vec<(String, String)> {
        self.named_tensors()
            .into_iter()
            .map(|(name, data)| {
                let mut h = Sha256::new();
                for v in data {
                    h.update(v.to_bits().to_le_bytes());
                }
                (name, hex::encode(h.finalize()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Query,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig { rank: 8, alpha: 16.0, targets: vec![LoraTarget::Query, LoraTarget::Value] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `(rank, d_in)`
    pub a: Array2<f64>,
    /// `(d_out, rank)`
    pub b: Array2<f64>,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// `(alpha / rank) · B · A`
    pub fn delta(&self) -> Array2<f64> {
        self.b.dot(&self.a) * self.scaling()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSlot {
    pub layer: usize,
    pub target: LoraTarget,
    pub adapter: LoraAdapter,
}

/// Frozen base weights plus trainable adapters.
///
/// The base is only reachable through a shared reference; training code
/// mutates adapters alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedModel {
    base: BaseWeights,
    slots: Vec<LoraSlot>,
}

/// Read access shared by base and adapted models.
pub trait LanguageModel {
    fn base(&self) -> &BaseWeights;
    fn adapter(&self, layer: usize, target: LoraTarget) -> Option<&LoraAdapter>;

    fn config(&self) -> &ModelConfig {
        &self.base().config
    }
}

impl LanguageModel for BaseWeights {
    fn base(&self) -> &BaseWeights {
        self
    }

    fn adapter(&self, _: usize, _: LoraTarget) -> Option<&LoraAdapter> {
        None
    }
}

impl LanguageModel for AdaptedModel {
    fn base(&self) -> &BaseWeights {
        &self.base
    }

    fn adapter(&self, layer: usize, target: LoraTarget) -> Option<&LoraAdapter> {
        self.slots.iter().find(|s| s.layer == layer && s.target == target).map(|s| &s.adapter)
    }
}

/// Attach zero-delta adapters (`A ~ N(0, 1/d_in)`, `B = 0`) to every
/// targeted matrix of every layer.
pub fn attach_lora(base: BaseWeights, lora: &LoraConfig, seed: u64) -> Result<AdaptedModel> {
    let d = base.config.d_model;
    if lora.rank == 0 || lora.rank > d {
        return Err(Error::Precondition(format!("LoRA rank must lie in 1..={d}, got {}", lora.rank)));
    }
    if !lora.alpha.is_finite() {
        return Err(Error::Precondition("LoRA alpha must be finite".into()));
    }
    let mut targets = lora.targets.clone();
    targets.sort();
    targets.dedup();
    let mut rng = seeded(seed, Stream::LoraInit);
    let mut slots = Vec::new();
    for layer in 0..base.config.n_layers {
        for &target in &targets {
            slots.push(LoraSlot {
                layer,
                target,
                adapter: LoraAdapter {
                    a: normal_matrix(&mut rng, lora.rank, d, 1.0 / (d as f64).sqrt()),
                    b: Array2::zeros((d, lora.rank)),
                    alpha: lora.alpha,
                },
            });
        }
    }
    Ok(AdaptedModel { base, slots })
}

impl AdaptedModel {
    pub fn slots(&self) -> &[LoraSlot] {
        &self.slots
    }

    /// Rebuild from parts, checking adapter shapes against the base.
    pub fn from_parts(base: BaseWeights, slots: Vec<LoraSlot>) -> Result<Self> {
        let d = base.config.d_model;
        for s in &slots {
            let r = s.adapter.a.nrows();
            if s.layer >= base.config.n_layers || r == 0 || s.adapter.a.dim() != (r, d) || s.adapter.b.dim() != (d, r) {
                return Err(Error::Precondition(format!(
                    "adapter for layer {} {:?} has inconsistent shape",
                    s.layer, s.target
                )));
            }
        }
        Ok(AdaptedModel { base, slots })
    }

    /// Trainable tensors in fixed order: `A₀, B₀, A₁, B₁, …` over slots.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.slots.iter().flat_map(|s| [&s.adapter.a, &s.adapter.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.slots.iter_mut().flat_map(|s| [&mut s.adapter.a, &mut s.adapter.b]).collect()
    }

    pub fn into_base(self) -> BaseWeights {
        self.base
    }
}

/// Fold every adapter into its base matrix.
pub fn merge_lora(adapted: &AdaptedModel) -> BaseWeights {
    let mut merged = adapted.base.clone();
    for slot in &adapted.slots {
        let layer = &mut merged.layers[slot.layer];
        let w = match slot.target {
            LoraTarget::Query => &mut layer.wq,
            LoraTarget::Value => &mut layer.wv,
        };
        *w += &slot.adapter.delta();
    }
    merged
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Trainable (adapter) parameters against the full parameter count.
pub fn count_trainable<M: LanguageModel + ?Sized>(model: &M) -> ParamCount {
    let base = model.base().param_count();
    let cfg = model.config();
    let mut trainable = 0;
    for layer in 0..cfg.n_layers {
        for target in [LoraTarget::Query, LoraTarget::Value] {
            if let Some(a) = model.adapter(layer, target) {
                trainable += a.a.len() + a.b.len();
            }
        }
    }
    let total = base + trainable;
    ParamCount { trainable, total, fraction: trainable as f64 / total as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 32, n_layers: 2, n_heads: 4, d_ff: 64, max_seq: 64, vocab: VOCAB_SIZE }
    }

    #[test]
    fn default_param_count_matches_shapes() {
        let base = init_model(ModelConfig::default(), 0).unwrap();
        assert_eq!(base.token_embedding.len(), 16_576);
        assert_eq!(base.param_count(), ModelConfig::default().base_param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(small(), 3).unwrap();
        let b = init_model(small(), 3).unwrap();
        assert_eq!(a.tensor_checksums(), b.tensor_checksums());
        assert_ne!(a, init_model(small(), 4).unwrap());
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig { n_heads: 5, ..small() };
        assert!(matches!(init_model(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn lora_counts() {
        let base = init_model(small(), 0).unwrap();
        let lora = LoraConfig { rank: 2, alpha: 4.0, ..LoraConfig::default() };
        let adapted = attach_lora(base.clone(), &lora, 1).unwrap();
        assert_eq!(count_trainable(&adapted).trainable, 512);

        let doubled = attach_lora(base.clone(), &LoraConfig { rank: 4, ..lora.clone() }, 1).unwrap();
        assert_eq!(count_trainable(&doubled).trainable, 1024);

        let plain = count_trainable(&base);
        assert_eq!((plain.trainable, plain.total, plain.fraction), (0, base.param_count(), 0.0));

        assert!(attach_lora(base.clone(), &LoraConfig { rank: 0, ..lora.clone() }, 1).is_err());
        assert!(attach_lora(base, &LoraConfig { rank: 33, ..lora }, 1).is_err());
    }

    #[test]
    fn zero_b_merges_to_base_bitwise() {
        let base = init_model(small(), 0).unwrap();
        let adapted = attach_lora(base.clone(), &LoraConfig::default(), 1).unwrap();
        assert!(adapted.slots().iter().all(|s| s.adapter.b.iter().all(|&v| v == 0.0)));
        let merged = merge_lora(&adapted);
        assert_eq!(merged.tensor_checksums(), base.tensor_checksums());
        assert_eq!(merge_lora(&adapted), merged);
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let base = init_model(small(), 0).unwrap();
        let mut slots = attach_lora(base.clone(), &LoraConfig::default(), 1).unwrap().slots().to_vec();
        slots[0].adapter.b = Array2::zeros((3, 8));
        assert!(AdaptedModel::from_parts(base, slots).is_err());
    }
}
