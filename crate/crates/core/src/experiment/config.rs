use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Domain, RatingRange, Schema, WindowMode, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::Variant;
use crate::model::{LoraConfig, ModelConfig};
use crate::promptgen::{PromptTemplate, TemplateSet};
use crate::train::{Stage, TrainConfig, WEIGHT_DECAY_GRID};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "TALLREC_OUTPUT_DIR";

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Where a domain's instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Delimited interaction log. Exclusive with `synthetic`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub rating_range: Option<RatingRange>,
    /// Ratings strictly above this count as likes.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub mode: Option<WindowMode>,
    /// Keep only the most recent instances.
    #[serde(default)]
    pub max_instances: Option<usize>,
    /// Generate planted-keyword instances instead of reading a log.
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetConfig {
    pub fn schema(&self, domain: Domain) -> Schema {
        self.schema.clone().unwrap_or_else(|| match domain {
            Domain::Movie => Schema::movie_default(),
            Domain::Book => Schema::book_default(),
        })
    }

    pub fn rating_range(&self, domain: Domain) -> RatingRange {
        self.rating_range.unwrap_or(match domain {
            Domain::Movie => RatingRange::MOVIE,
            Domain::Book => RatingRange::BOOK,
        })
    }

    pub fn threshold(&self, domain: Domain) -> f64 {
        self.threshold.unwrap_or(match domain {
            Domain::Movie => 3.0,
            Domain::Book => 5.0,
        })
    }

    pub fn mode(&self, domain: Domain) -> WindowMode {
        self.mode.unwrap_or(match domain {
            Domain::Movie => WindowMode::Chronological,
            Domain::Book => WindowMode::RandomSample,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Datasets {
    #[serde(default)]
    pub movie: Option<DatasetConfig>,
    #[serde(default)]
    pub book: Option<DatasetConfig>,
}

impl Datasets {
    pub fn get(&self, domain: Domain) -> Option<&DatasetConfig> {
        match domain {
            Domain::Movie => self.movie.as_ref(),
            Domain::Book => self.book.as_ref(),
        }
    }

    /// Configured domains, movie first.
    pub fn domains(&self) -> Vec<Domain> {
        [Domain::Movie, Domain::Book].into_iter().filter(|&d| self.get(d).is_some()).collect()
    }
}

/// Template files, one per domain; a missing entry uses the built-in template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    #[serde(default)]
    pub movie: Option<PathBuf>,
    #[serde(default)]
    pub book: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralConfig {
    pub tasks: usize,
    pub validation_tasks: usize,
    pub seed: u64,
}

impl Default for GeneralConfig {
    fn default() -> Self {
        GeneralConfig { tasks: 256, validation_tasks: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSections {
    pub general: TrainConfig,
    pub rec: TrainConfig,
}

impl Default for TrainSections {
    fn default() -> Self {
        TrainSections { general: TrainConfig::new(Stage::General), rec: TrainConfig::new(Stage::Rec) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub weight_decays: Vec<f64>,
    pub variant: Variant,
    /// Shot count of the sweep runs; defaults to the largest K of the grid.
    pub k: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { weight_decays: WEIGHT_DECAY_GRID.to_vec(), variant: Variant::TALLRec, k: None }
    }
}

/// A full experiment: data, model, training schedule and protocol grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Also train on each domain and on both, testing on both.
    #[serde(default)]
    pub cross_domain: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub split_seed: u64,
    /// Seed of the frozen backbone shared by every run.
    #[serde(default)]
    pub base_seed: u64,
    /// Validation instances per domain used for model selection.
    #[serde(default)]
    pub validation_cap: Option<usize>,
    #[serde(default)]
    pub templates: TemplatePaths,
    pub datasets: Datasets,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub lora: LoraConfig,
    #[serde(default)]
    pub general: GeneralConfig,
    #[serde(default)]
    pub train: TrainSections,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_k_grid() -> Vec<usize> {
    vec![16, 64, 256]
}
fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl ExperimentConfig {
    /// Parse TOML, resolve relative paths against `base_dir`, and validate.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        for p in [&mut cfg.templates.movie, &mut cfg.templates.book].into_iter().flatten() {
            resolve(p);
        }
        for d in [&mut cfg.datasets.movie, &mut cfg.datasets.book].into_iter().flatten() {
            if let Some(p) = d.path.as_mut() {
                resolve(p);
            }
        }
        cfg.train.general.stage = Stage::General;
        cfg.train.rec.stage = Stage::Rec;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file; [`OUTPUT_DIR_ENV`] replaces `output_dir` when set.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("config file {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad(format!("seed list {:?} has duplicates", self.seeds));
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return bad(format!("K grid {:?} must be non-empty with every K >= 1", self.k_grid));
        }
        if self.variants.is_empty() {
            return bad("variant list is empty".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.datasets.domains().is_empty() {
            return bad("no datasets configured".into());
        }
        if self.cross_domain && self.datasets.domains().len() != 2 {
            return bad("cross_domain needs both a movie and a book dataset".into());
        }
        for domain in self.datasets.domains() {
            let d = self.datasets.get(domain).unwrap();
            match (&d.path, &d.synthetic) {
                (Some(p), None) if !p.is_file() => {
                    return bad(format!("{domain} dataset {} does not exist", p.display()))
                }
                (Some(_), None) => {}
                (None, Some(s)) if s.instances < 10 => {
                    return bad(format!("{domain} synthetic dataset needs at least 10 instances"))
                }
                (None, Some(_)) => {}
                _ => return bad(format!("{domain} dataset needs exactly one of `path` and `synthetic`")),
            }
            let range = d.rating_range(domain);
            if !(range.min <= range.max) {
                return bad(format!("{domain} rating range is empty"));
            }
        }
        for p in [&self.templates.movie, &self.templates.book].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("template {} does not exist", p.display()));
            }
        }
        self.model.validate()?;
        if self.lora.rank == 0 || self.lora.rank > self.model.d_model {
            return bad(format!("LoRA rank must lie in 1..={}", self.model.d_model));
        }
        self.train.general.validate()?;
        self.train.rec.validate()?;
        if self.sweep.weight_decays.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("sweep weight decays must be non-negative".into());
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        let mut set = TemplateSet::default();
        if let Some(p) = &self.templates.movie {
            set.movie = PromptTemplate::load(p)?;
        }
        if let Some(p) = &self.templates.book {
            set.book = PromptTemplate::load(p)?;
        }
        Ok(set)
    }

    /// SHA-256 over the canonical JSON form, excluding `output_dir`, plus the
    /// contents of every referenced template file. Hex encoded.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&value)?);
        for p in [&self.templates.movie, &self.templates.book].into_iter().flatten() {
            h.update(std::fs::read(p).map_err(|e| Error::io(p, e))?);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Largest K of the grid, used by the sweep when none is set.
    pub fn sweep_k(&self) -> usize {
        self.sweep.k.unwrap_or_else(|| *self.k_grid.iter().max().expect("validated non-empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[datasets.movie]
synthetic = { instances = 40 }
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.seeds, DEFAULT_SEEDS);
        assert_eq!(cfg.k_grid, [16, 64, 256]);
        assert_eq!(cfg.window, 10);
        assert_eq!(cfg.output_dir, Path::new("/tmp/runs"));
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.train.general.stage, Stage::General);
        assert_eq!(cfg.train.rec.learning_rate, 1e-3);
        let movie = cfg.datasets.movie.as_ref().unwrap();
        assert_eq!(movie.threshold(Domain::Movie), 3.0);
        assert_eq!(movie.mode(Domain::Movie), WindowMode::Chronological);
        assert_eq!(movie.mode(Domain::Book), WindowMode::RandomSample);
        assert_eq!(movie.threshold(Domain::Book), 5.0);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::from_toml(MINIMAL, Path::new("/tmp")).unwrap();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seeds = vec![9];
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            "seeds = []\n[datasets.movie]\nsynthetic = { instances = 40 }",
            "seeds = [1, 1]\n[datasets.movie]\nsynthetic = { instances = 40 }",
            "k_grid = [0]\n[datasets.movie]\nsynthetic = { instances = 40 }",
            "[datasets]",
            "[datasets.movie]\npath = \"no/such/file.csv\"",
            "[datasets.movie]\npath = \"x.csv\"\nsynthetic = { instances = 40 }",
            "cross_domain = true\n[datasets.movie]\nsynthetic = { instances = 40 }",
            "bogus = 1\n[datasets.movie]\nsynthetic = { instances = 40 }",
            "[datasets.movie]\nsynthetic = { instances = 40 }\n[model]\nd_model = 30\nn_heads = 4",
            "[datasets.movie]\nsynthetic = { instances = 40 }\n[train.rec]\nlearning_rate = -1.0",
            "[datasets.movie]\nsynthetic = { instances = 40 }\n[lora]\nrank = 0",
        ];
        for case in cases {
            let err = ExperimentConfig::from_toml(case, Path::new("/tmp")).unwrap_err();
            assert!(err.is_validation(), "{case}: {err}");
        }
    }
}
