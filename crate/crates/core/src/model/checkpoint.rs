use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdaptedModel, BaseWeights, LoraSlot};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// JSON container: format version, base tensors (which carry the config),
/// adapter tensors and free-form metadata. Floats round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub base: BaseWeights,
    pub adapters: Vec<LoraSlot>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &AdaptedModel) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            base: model.base.clone(),
            adapters: model.slots.clone(),
            metadata: Default::default(),
        }
    }

    pub fn into_model(self) -> Result<AdaptedModel> {
        AdaptedModel::from_parts(self.base, self.adapters)
    }
}

/// Write atomically: serialize to a sibling temp file, then rename.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    serde_json::to_writer(&mut file, checkpoint)?;
    file.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Serde(format!(
            "checkpoint format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            ckpt.format_version
        )));
    }
    ckpt.base.config.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attach_lora, init_model, LoraConfig, ModelConfig};
    use rand::Rng;

    #[test]
    fn save_load_is_bitwise() {
        let cfg = ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_seq: 16, ..ModelConfig::default() };
        let mut model =
            attach_lora(init_model(cfg, 5).unwrap(), &LoraConfig { rank: 2, ..LoraConfig::default() }, 6).unwrap();
        let mut rng = crate::rng::seeded(1, crate::rng::Stream::Synthetic);
        for p in model.params_mut() {
            p.mapv_inplace(|_| rng.random::<f64>() * 1e-3 + 1.0 / 3.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut ckpt = Checkpoint::from_model(&model);
        ckpt.metadata.insert("seed".into(), 6.into());
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.base.tensor_checksums(), model.base.tensor_checksums());
        let restored = back.into_model().unwrap();
        for (a, b) in restored.params().iter().zip(model.params()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn rejects_unknown_version() {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 8, max_seq: 4, ..ModelConfig::default() };
        let mut ckpt = Checkpoint::from_model(
            &attach_lora(init_model(cfg, 0).unwrap(), &LoraConfig { rank: 1, ..LoraConfig::default() }, 0).unwrap(),
        );
        ckpt.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
