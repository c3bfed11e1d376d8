use std::fmt;

use serde::{Deserialize, Serialize};

use super::auc::auc;
use super::scoring::{score_instance, ScoredInstance};
use crate::corpus::{merge_domains, pad_history, sample_few_shot, Domain, RecInstance};
use crate::error::{Error, Result};
use crate::model::{init_model, AdaptedModel, LanguageModel, LoraConfig, ModelConfig};
use crate::promptgen::{render_rec_sample, PromptTemplate, TemplateSet, TuningSample};
use crate::train::{tallrec_pipeline, PipelineLog, StageData, TrainConfig, Validation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// General instruction tuning only.
    AT,
    /// Rec-tuning only.
    RT,
    /// Both stages.
    TALLRec,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::AT, Variant::RT, Variant::TALLRec];

    pub fn uses_general(self) -> bool {
        matches!(self, Variant::AT | Variant::TALLRec)
    }

    pub fn uses_rec(self) -> bool {
        matches!(self, Variant::RT | Variant::TALLRec)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "at" => Ok(Variant::AT),
            "rt" => Ok(Variant::RT),
            "tallrec" => Ok(Variant::TALLRec),
            _ => Err(Error::Config(format!("unknown variant {s:?}; expected AT, RT or TALLRec"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainDomain {
    Movie,
    Book,
    Both,
}

impl From<Domain> for TrainDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Movie => TrainDomain::Movie,
            Domain::Book => TrainDomain::Book,
        }
    }
}

impl fmt::Display for TrainDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainDomain::Movie => "movie",
            TrainDomain::Book => "book",
            TrainDomain::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub train_domain: Option<TrainDomain>,
    pub test_domain: Domain,
    pub seed: Option<u64>,
    pub scores: Vec<ScoredInstance>,
}

impl EvalResult {
    pub fn with_run(mut self, variant: Variant, k: usize, train_domain: TrainDomain, seed: u64) -> Self {
        self.variant = Some(variant);
        self.k = Some(k);
        self.train_domain = Some(train_domain);
        self.seed = Some(seed);
        self
    }
}

/// Pad each instance to `window` and render it with its own domain's template.
pub fn prepare_rec_samples(
    instances: &[RecInstance],
    templates: &TemplateSet,
    window: usize,
) -> Result<Vec<TuningSample>> {
    instances.iter().map(|inst| render_rec_sample(&pad_history(inst, window)?, templates.get(inst.domain))).collect()
}

/// Render, score and compute AUC over `test`. All instances must share a domain.
pub fn run_eval<M: LanguageModel + ?Sized>(
    model: &M,
    test: &[RecInstance],
    template: &PromptTemplate,
    window: usize,
) -> Result<EvalResult> {
    let Some(first) = test.first() else {
        return Err(Error::Precondition("empty test set".into()));
    };
    let domain = first.domain;
    if test.iter().any(|t| t.domain != domain) {
        return Err(Error::Precondition("test instances span several domains".into()));
    }
    let scored = test
        .iter()
        .enumerate()
        .map(|(i, inst)| score_instance(model, &render_rec_sample(&pad_history(inst, window)?, template)?, i))
        .collect::<Result<Vec<_>>>()?;
    let n_pos = scored.iter().filter(|s| s.label.is_like()).count();
    let auc = auc(&scored)?;
    Ok(EvalResult {
        auc,
        n_pos,
        n_neg: scored.len() - n_pos,
        variant: None,
        k: None,
        train_domain: None,
        test_domain: domain,
        seed: None,
        scores: scored,
    })
}

/// One domain's prepared splits.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub domain: Domain,
    pub train: Vec<RecInstance>,
    pub validation: Vec<RecInstance>,
    pub test: Vec<RecInstance>,
}

/// Everything a training run needs besides the rec data.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub model: ModelConfig,
    /// Seed of the frozen backbone, shared by every run.
    pub base_seed: u64,
    pub lora: LoraConfig,
    pub window: usize,
    pub templates: TemplateSet,
    pub general: Vec<TuningSample>,
    pub general_validation: Vec<TuningSample>,
    pub train_general: TrainConfig,
    pub train_rec: TrainConfig,
    /// At most this many validation instances per domain drive model selection.
    pub validation_cap: Option<usize>,
}

impl Protocol {
    fn validation(&self, instances: &[RecInstance]) -> Result<Validation> {
        let take = self.validation_cap.unwrap_or(instances.len()).min(instances.len());
        if take == 0 {
            return Ok(Validation::None);
        }
        Ok(Validation::Auc(prepare_rec_samples(&instances[..take], &self.templates, self.window)?))
    }

    /// Train one variant on the given rec instances.
    pub fn train(
        &self,
        variant: Variant,
        rec_train: &[RecInstance],
        rec_validation: &[RecInstance],
        seed: u64,
    ) -> Result<(AdaptedModel, PipelineLog)> {
        let base = init_model(self.model, self.base_seed)?;
        let general = if variant.uses_general() {
            let validation = if self.general_validation.is_empty() {
                Validation::None
            } else {
                Validation::Loss(self.general_validation.clone())
            };
            StageData::new(self.general.clone(), validation)
        } else {
            StageData::default()
        };
        let rec = if variant.uses_rec() {
            StageData::new(
                prepare_rec_samples(rec_train, &self.templates, self.window)?,
                self.validation(rec_validation)?,
            )
        } else {
            StageData::default()
        };
        let cfg_general = TrainConfig { seed, ..self.train_general.clone() };
        let cfg_rec = TrainConfig { seed, ..self.train_rec.clone() };
        tallrec_pipeline(base, &self.lora, seed, &general, &rec, &cfg_general, &cfg_rec)
    }

    pub fn evaluate<M: LanguageModel + ?Sized>(&self, model: &M, test: &[RecInstance]) -> Result<EvalResult> {
        let domain = test.first().map_or(Domain::Movie, |t| t.domain);
        run_eval(model, test, self.templates.get(domain), self.window)
    }
}

/// One result per seed for `variant` trained on `k` shots of `data.train`.
pub fn ablation_run(
    protocol: &Protocol,
    data: &DomainData,
    variant: Variant,
    k: usize,
    seeds: &[u64],
) -> Result<Vec<EvalResult>> {
    seeds
        .iter()
        .map(|&seed| {
            let shots = if variant.uses_rec() { sample_few_shot(&data.train, k, seed)? } else { Vec::new() };
            let (model, _) = protocol.train(variant, &shots, &data.validation, seed)?;
            Ok(protocol.evaluate(&model, &data.test)?.with_run(variant, k, data.domain.into(), seed))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainCell {
    pub train_domain: TrainDomain,
    pub test_domain: Domain,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub results: Vec<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainGrid {
    pub k: usize,
    /// Size of each trained model's rec set, keyed like `cells`.
    pub train_sizes: Vec<(TrainDomain, usize)>,
    /// Train domain major (book, movie, both), test domain minor (movie, book).
    pub cells: Vec<CrossDomainCell>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// K-shot training instances and validation instances for one train domain.
/// `Both` draws K from each domain, the same draws the single-domain sets
/// use for `seed`, and merges them; its validation set takes at most half of
/// `validation_cap` from each domain.
pub fn rec_training_set(
    train_domain: TrainDomain,
    movie: &DomainData,
    book: &DomainData,
    k: usize,
    seed: u64,
    validation_cap: Option<usize>,
) -> Result<(Vec<RecInstance>, Vec<RecInstance>)> {
    Ok(match train_domain {
        TrainDomain::Movie => (sample_few_shot(&movie.train, k, seed)?, movie.validation.clone()),
        TrainDomain::Book => (sample_few_shot(&book.train, k, seed)?, book.validation.clone()),
        TrainDomain::Both => {
            let half = validation_cap.map_or(usize::MAX, |c| c / 2);
            let head = |v: &[RecInstance]| v[..v.len().min(half)].to_vec();
            (
                merge_domains(&sample_few_shot(&movie.train, k, seed)?, &sample_few_shot(&book.train, k, seed)?, seed),
                merge_domains(&head(&movie.validation), &head(&book.validation), seed),
            )
        }
    })
}

/// Train on book-only, movie-only and merged K-shot sets (K per domain) and
/// test each model on both domains.
pub fn cross_domain_matrix(
    protocol: &Protocol,
    movie: &DomainData,
    book: &DomainData,
    k: usize,
    seeds: &[u64],
) -> Result<CrossDomainGrid> {
    if movie.domain != Domain::Movie || book.domain != Domain::Book {
        return Err(Error::Precondition("cross-domain grid needs movie and book data".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Precondition("no seeds".into()));
    }
    let train_domains = [TrainDomain::Book, TrainDomain::Movie, TrainDomain::Both];
    let tests = [movie, book];
    let mut results: Vec<Vec<EvalResult>> = vec![Vec::new(); train_domains.len() * tests.len()];
    let mut train_sizes = Vec::new();
    for &seed in seeds {
        for (ti, &td) in train_domains.iter().enumerate() {
            let (shots, validation) = rec_training_set(td, movie, book, k, seed, protocol.validation_cap)?;
            if seed == seeds[0] {
                train_sizes.push((td, shots.len()));
            }
            let (model, _) = protocol.train(Variant::TALLRec, &shots, &validation, seed)?;
            for (ei, data) in tests.iter().enumerate() {
                let r = protocol.evaluate(&model, &data.test)?.with_run(Variant::TALLRec, k, td, seed);
                results[ti * tests.len() + ei].push(r);
            }
        }
    }
    let mut cells = Vec::new();
    for (ti, &td) in train_domains.iter().enumerate() {
        for (ei, data) in tests.iter().enumerate() {
            let rs = std::mem::take(&mut results[ti * tests.len() + ei]);
            let (mean_auc, std_auc) = mean_std(&rs.iter().map(|r| r.auc).collect::<Vec<_>>());
            cells.push(CrossDomainCell { train_domain: td, test_domain: data.domain, mean_auc, std_auc, results: rs });
        }
    }
    Ok(CrossDomainGrid { k, train_sizes, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Preference;
    use crate::model::BaseWeights;
    use crate::synthetic::planted_keyword_instances;

    fn data(domain: Domain, seed: u64) -> DomainData {
        DomainData {
            domain,
            train: planted_keyword_instances(domain, 40, 3, true, seed),
            validation: planted_keyword_instances(domain, 10, 3, true, seed + 1),
            test: planted_keyword_instances(domain, 10, 3, true, seed + 2),
        }
    }

    fn tiny_model() -> BaseWeights {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_seq: 512, ..ModelConfig::default() };
        init_model(cfg, 0).unwrap()
    }

    #[test]
    fn variant_flags_and_parsing() {
        assert_eq!(
            Variant::ALL.map(|v| (v.uses_general(), v.uses_rec())),
            [(true, false), (false, true), (true, true)]
        );
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("tallrec".parse::<Variant>().unwrap(), Variant::TALLRec);
        assert!("both".parse::<Variant>().unwrap_err().is_validation());
    }

    #[test]
    fn both_takes_k_from_each_domain() {
        let (movie, book) = (data(Domain::Movie, 1), data(Domain::Book, 5));
        let (single, _) = rec_training_set(TrainDomain::Movie, &movie, &book, 8, 3, None).unwrap();
        let (both, validation) = rec_training_set(TrainDomain::Both, &movie, &book, 8, 3, Some(6)).unwrap();
        assert_eq!(both.len(), 16);
        assert_eq!(both.iter().filter(|i| i.domain == Domain::Movie).count(), 8);
        for inst in &single {
            assert!(both.contains(inst));
        }
        assert_eq!(validation.len(), 6);
        assert_eq!(validation.iter().filter(|i| i.domain == Domain::Book).count(), 3);
        assert!(rec_training_set(TrainDomain::Book, &movie, &book, 41, 0, None).is_err());
    }

    #[test]
    fn prepared_samples_are_padded_and_use_their_domain_template() {
        let mut insts = data(Domain::Book, 2).train[..2].to_vec();
        insts.extend_from_slice(&data(Domain::Movie, 2).train[..1]);
        let samples = prepare_rec_samples(&insts, &TemplateSet::default(), 4).unwrap();
        assert!(samples[0].instruction_input.contains("Target new book:"));
        assert!(samples[2].instruction_input.contains("Target new movie:"));
        let last = &insts[0].history.last().unwrap().text;
        let listed = samples[0].instruction_input.matches(last.as_str()).count();
        assert!(listed >= 1 + 4 - insts[0].history.len());
    }

    #[test]
    fn eval_checks_its_input() {
        let model = tiny_model();
        let template = PromptTemplate::for_domain(Domain::Movie);
        assert!(run_eval(&model, &[], &template, 3).is_err());
        let mut mixed = data(Domain::Movie, 1).test;
        mixed.push(data(Domain::Book, 1).test[0].clone());
        assert!(run_eval(&model, &mixed, &template, 3).is_err());
        let liked: Vec<_> = data(Domain::Movie, 1).test.into_iter().filter(|i| i.label == Preference::Like).collect();
        assert!(matches!(run_eval(&model, &liked, &template, 3), Err(Error::UndefinedAuc { negatives: 0, .. })));
    }

    #[test]
    fn eval_counts_and_indexes() {
        let test = data(Domain::Movie, 4).test;
        let r = run_eval(&tiny_model(), &test, &PromptTemplate::for_domain(Domain::Movie), 3).unwrap();
        assert_eq!((r.n_pos, r.n_neg), (5, 5));
        assert!(r.scores.iter().enumerate().all(|(i, s)| s.index == i && (0.0..=1.0).contains(&s.score)));
        assert_eq!(r.variant, None);
        assert_eq!(r.with_run(Variant::RT, 4, TrainDomain::Both, 2).train_domain, Some(TrainDomain::Both));
    }
}
