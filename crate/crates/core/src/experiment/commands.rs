use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::report::{aggregate_seeds, AggregateReport};
use crate::corpus::{
    build_history_windows, load_interactions, most_recent, read_instances_jsonl, sample_few_shot, split_dataset,
    write_instances_jsonl, Domain, RecInstance, WindowMode, WindowSpec, DEFAULT_RATIOS,
};
use crate::error::{Error, Result};
use crate::eval::{prepare_rec_samples, rec_training_set, DomainData, EvalResult, Protocol, TrainDomain, Variant};
use crate::model::{attach_lora, init_model, load_checkpoint, AdaptedModel, Checkpoint};
use crate::promptgen::{generate_general_tasks, read_samples_jsonl, write_samples_jsonl, TuningSample};
use crate::synthetic::planted_keyword_instances;
use crate::tokenizer::{pack_pair, TokenSequence};
use crate::train::{grad_check, randomize_adapters, GradCheckReport, PipelineLog, TrainConfig};

const SPLITS: [&str; 3] = ["train", "validation", "test"];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a sibling temp file and a rename, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// A config bound to its output directory and hash.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub config_hash: String,
}

impl Workspace {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config_hash = config.hash()?;
        Ok(Workspace { config, config_hash })
    }

    pub fn root(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn prepared_manifest_path(&self) -> PathBuf {
        self.root().join("prepared").join("manifest.json")
    }

    pub fn instances_path(&self, domain: Domain, split: &str) -> PathBuf {
        self.root().join("prepared").join(domain.noun()).join(format!("{split}.jsonl"))
    }

    pub fn general_path(&self, split: &str) -> PathBuf {
        self.root().join("prepared").join("general").join(format!("{split}.jsonl"))
    }

    pub fn run_path(&self, run: &RunSpec) -> PathBuf {
        self.root().join("runs").join(format!("{}.json", run.key()))
    }

    pub fn log_path(&self, run: &RunSpec) -> PathBuf {
        self.root().join("logs").join(format!("{}.jsonl", run.key()))
    }

    pub fn checkpoint_path(&self, sha256: &str) -> PathBuf {
        self.root().join("checkpoints").join(format!("{sha256}.json"))
    }

    pub fn result_path(&self, run: &RunSpec, test_domain: Domain) -> PathBuf {
        self.root().join("results").join(format!("{}__test-{}.json", run.key(), test_domain))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub domain: Domain,
    pub source: String,
    pub mode: Option<WindowMode>,
    pub threshold: f64,
    pub records: usize,
    pub skipped_rows: usize,
    pub users_skipped: usize,
    pub targets_skipped: usize,
    pub instances: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Written by `prepare`: what was produced, from which config, and the
/// SHA-256 of every data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub config_hash: String,
    pub split_seed: u64,
    pub ratios: [usize; 3],
    pub window: usize,
    pub domains: Vec<DomainManifest>,
    pub general_train: usize,
    pub general_validation: usize,
    pub general_seed: u64,
    /// Path relative to the output directory → SHA-256.
    pub files: BTreeMap<String, String>,
}

fn domain_instances(ws: &Workspace, domain: Domain) -> Result<(Vec<RecInstance>, DomainManifest)> {
    let cfg = &ws.config;
    let d = cfg.datasets.get(domain).ok_or_else(|| Error::Config(format!("no {domain} dataset configured")))?;
    let threshold = d.threshold(domain);
    let mut m = DomainManifest {
        domain,
        source: String::new(),
        mode: None,
        threshold,
        records: 0,
        skipped_rows: 0,
        users_skipped: 0,
        targets_skipped: 0,
        instances: 0,
        train: 0,
        validation: 0,
        test: 0,
    };
    let mut instances = if let Some(s) = &d.synthetic {
        m.source = format!("synthetic:{}:{}", s.instances, s.seed);
        planted_keyword_instances(domain, s.instances, cfg.window, true, s.seed)
    } else {
        let path = d.path.as_ref().expect("validated dataset source");
        m.source = path.display().to_string();
        let loaded = load_interactions(path, &d.schema(domain), d.rating_range(domain))?;
        let mode = d.mode(domain);
        m.mode = Some(mode);
        m.records = loaded.records.len();
        m.skipped_rows = loaded.skipped();
        let spec = WindowSpec { window: cfg.window, mode, threshold, domain };
        let report = build_history_windows(&loaded.records, &spec, cfg.split_seed)?;
        m.users_skipped = report.users_skipped;
        m.targets_skipped = report.targets_skipped;
        report.instances
    };
    if let Some(n) = d.max_instances {
        instances = most_recent(instances, n);
    }
    m.instances = instances.len();
    Ok((instances, m))
}

/// Build, split and write every configured domain plus the general task set.
/// Re-running with the same config rewrites byte-identical files.
pub fn cmd_prepare(ws: &Workspace) -> Result<PrepareManifest> {
    let cfg = &ws.config;
    let mut files = BTreeMap::new();
    let mut record = |path: PathBuf, bytes: Vec<u8>| -> Result<()> {
        let rel = path.strip_prefix(ws.root()).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        files.insert(rel, sha256_hex(&bytes));
        write_atomic(&path, &bytes)
    };
    let mut domains = Vec::new();
    for domain in cfg.datasets.domains() {
        let (instances, mut m) = domain_instances(ws, domain)?;
        let splits = split_dataset(&instances, DEFAULT_RATIOS, cfg.split_seed)?;
        (m.train, m.validation, m.test) = (splits.train.len(), splits.validation.len(), splits.test.len());
        for (name, part) in SPLITS.iter().zip([&splits.train, &splits.validation, &splits.test]) {
            let mut bytes = Vec::new();
            write_instances_jsonl(&mut bytes, part)?;
            record(ws.instances_path(domain, name), bytes)?;
        }
        domains.push(m);
    }
    let general = generate_general_tasks(cfg.general.tasks + cfg.general.validation_tasks, cfg.general.seed);
    let (train, validation) = general.split_at(cfg.general.tasks);
    for (name, part) in [("train", train), ("validation", validation)] {
        let mut bytes = Vec::new();
        write_samples_jsonl(&mut bytes, part)?;
        record(ws.general_path(name), bytes)?;
    }
    let manifest = PrepareManifest {
        config_hash: ws.config_hash.clone(),
        split_seed: cfg.split_seed,
        ratios: DEFAULT_RATIOS,
        window: cfg.window,
        domains,
        general_train: train.len(),
        general_validation: validation.len(),
        general_seed: cfg.general.seed,
        files,
    };
    write_atomic(&ws.prepared_manifest_path(), &pretty_json(&manifest)?)?;
    Ok(manifest)
}

/// Prepared data loaded back from disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub domains: Vec<DomainData>,
    pub general: Vec<TuningSample>,
    pub general_validation: Vec<TuningSample>,
}

impl Prepared {
    pub fn domain(&self, domain: Domain) -> Result<&DomainData> {
        self.domains
            .iter()
            .find(|d| d.domain == domain)
            .ok_or_else(|| Error::Precondition(format!("no prepared {domain} data")))
    }
}

fn open_reader(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn load_prepared(ws: &Workspace) -> Result<Prepared> {
    let manifest_path = ws.prepared_manifest_path();
    if !manifest_path.is_file() {
        return Err(Error::Precondition(format!("{} not found; run `prepare` first", manifest_path.display())));
    }
    let manifest: PrepareManifest = read_json(&manifest_path)?;
    if manifest.config_hash != ws.config_hash {
        return Err(Error::Precondition(format!(
            "prepared data comes from config {}, current config is {}; run `prepare` again",
            manifest.config_hash, ws.config_hash
        )));
    }
    let mut domains = Vec::new();
    for m in &manifest.domains {
        let mut parts = Vec::new();
        for name in SPLITS {
            parts.push(read_instances_jsonl(open_reader(&ws.instances_path(m.domain, name))?)?);
        }
        let test = parts.pop().unwrap();
        let validation = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        domains.push(DomainData { domain: m.domain, train, validation, test });
    }
    Ok(Prepared {
        domains,
        general: read_samples_jsonl(open_reader(&ws.general_path("train"))?)?,
        general_validation: read_samples_jsonl(open_reader(&ws.general_path("validation"))?)?,
    })
}

fn prepared_is_current(ws: &Workspace) -> bool {
    read_json::<PrepareManifest>(&ws.prepared_manifest_path()).is_ok_and(|m| m.config_hash == ws.config_hash)
}

pub fn protocol(ws: &Workspace, prepared: &Prepared) -> Result<Protocol> {
    let cfg = &ws.config;
    Ok(Protocol {
        model: cfg.model,
        base_seed: cfg.base_seed,
        lora: cfg.lora.clone(),
        window: cfg.window,
        templates: cfg.templates()?,
        general: prepared.general.clone(),
        general_validation: prepared.general_validation.clone(),
        train_general: cfg.train.general.clone(),
        train_rec: cfg.train.rec.clone(),
        validation_cap: cfg.validation_cap,
    })
}

/// One training run of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunSpec {
    pub variant: Variant,
    pub k: usize,
    pub train_domain: TrainDomain,
    pub seed: u64,
}

impl RunSpec {
    /// File-name key, e.g. `tallrec-movie-k64-s0`.
    pub fn key(&self) -> String {
        format!("{}-{}-k{}-s{}", self.variant.to_string().to_lowercase(), self.train_domain, self.k, self.seed)
    }
}

/// Registration of a finished run. Written last, after its checkpoint, so
/// an interrupted run never appears registered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    #[serde(flatten)]
    pub run: RunSpec,
    /// Path relative to the output directory.
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    pub rec_train_size: usize,
    pub general_selected_epoch: Option<usize>,
    pub rec_selected_epoch: Option<usize>,
}

fn rec_sets(prepared: &Prepared, ws: &Workspace, run: &RunSpec) -> Result<(Vec<RecInstance>, Vec<RecInstance>)> {
    match run.train_domain {
        TrainDomain::Both => rec_training_set(
            TrainDomain::Both,
            prepared.domain(Domain::Movie)?,
            prepared.domain(Domain::Book)?,
            run.k,
            run.seed,
            ws.config.validation_cap,
        ),
        single => {
            let domain = if single == TrainDomain::Movie { Domain::Movie } else { Domain::Book };
            let data = prepared.domain(domain)?;
            Ok((sample_few_shot(&data.train, run.k, run.seed)?, data.validation.clone()))
        }
    }
}

fn load_registered(ws: &Workspace, run: &RunSpec) -> Option<RunRecord> {
    let record: RunRecord = read_json(&ws.run_path(run)).ok()?;
    let bytes = std::fs::read(ws.root().join(&record.checkpoint)).ok()?;
    (record.config_hash == ws.config_hash && sha256_hex(&bytes) == record.checkpoint_sha256).then_some(record)
}

#[derive(Serialize)]
struct RunLine<'a> {
    r#type: &'static str,
    config_hash: &'a str,
    #[serde(flatten)]
    run: &'a RunSpec,
}

fn write_logs(ws: &Workspace, run: &RunSpec, log: &PipelineLog) -> Result<()> {
    let mut bytes = Vec::new();
    serde_json::to_writer(&mut bytes, &RunLine { r#type: "run", config_hash: &ws.config_hash, run })?;
    bytes.push(b'\n');
    for stage in [&log.general, &log.rec].into_iter().flatten() {
        stage.write_jsonl(&mut bytes)?;
    }
    write_atomic(&ws.log_path(run), &bytes)
}

/// Train one run, write its log and content-addressed checkpoint, then
/// register it. A run already registered under the same config is reused.
pub fn cmd_train(ws: &Workspace, prepared: &Prepared, run: &RunSpec) -> Result<RunRecord> {
    if let Some(existing) = load_registered(ws, run) {
        return Ok(existing);
    }
    let (shots, validation) = rec_sets(prepared, ws, run)?;
    let protocol = protocol(ws, prepared)?;
    let rec_train: &[RecInstance] = if run.variant.uses_rec() { &shots } else { &[] };
    let (model, log) = protocol.train(run.variant, rec_train, &validation, run.seed)?;
    write_logs(ws, run, &log)?;

    let mut checkpoint = Checkpoint::from_model(&model);
    checkpoint.metadata.insert("config_hash".into(), ws.config_hash.clone().into());
    let bytes = serde_json::to_vec(&checkpoint)?;
    let sha = sha256_hex(&bytes);
    let path = ws.checkpoint_path(&sha);
    if !path.is_file() {
        write_atomic(&path, &bytes)?;
    }
    let record = RunRecord {
        config_hash: ws.config_hash.clone(),
        run: *run,
        checkpoint: format!("checkpoints/{sha}.json"),
        checkpoint_sha256: sha,
        rec_train_size: rec_train.len(),
        general_selected_epoch: log.general.as_ref().and_then(|l| l.selected_epoch),
        rec_selected_epoch: log.rec.as_ref().and_then(|l| l.selected_epoch),
    };
    write_atomic(&ws.run_path(run), &pretty_json(&record)?)?;
    Ok(record)
}

/// Load a registered run's model, verifying the checkpoint digest.
pub fn load_run_model(ws: &Workspace, run: &RunSpec) -> Result<(RunRecord, AdaptedModel)> {
    let path = ws.run_path(run);
    if !path.is_file() {
        return Err(Error::Precondition(format!("run {} is not registered; train it first", run.key())));
    }
    let record: RunRecord = read_json(&path)?;
    let ckpt_path = ws.root().join(&record.checkpoint);
    let bytes = std::fs::read(&ckpt_path).map_err(|e| Error::io(&ckpt_path, e))?;
    if sha256_hex(&bytes) != record.checkpoint_sha256 {
        return Err(Error::Inconsistent(format!("checkpoint {} does not match its digest", ckpt_path.display())));
    }
    let model = load_checkpoint(&ckpt_path)?.into_model()?;
    Ok((record, model))
}

/// One evaluation with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    #[serde(flatten)]
    pub result: EvalResult,
}

/// Score a registered run on a domain's test split and write the result.
pub fn cmd_eval(ws: &Workspace, prepared: &Prepared, run: &RunSpec, test_domain: Domain) -> Result<ResultRecord> {
    let (record, model) = load_run_model(ws, run)?;
    let protocol = protocol(ws, prepared)?;
    let result = protocol.evaluate(&model, &prepared.domain(test_domain)?.test)?.with_run(
        run.variant,
        run.k,
        run.train_domain,
        run.seed,
    );
    let out = ResultRecord { config_hash: ws.config_hash.clone(), checkpoint_sha256: record.checkpoint_sha256, result };
    let mut bytes = serde_json::to_vec(&out)?;
    bytes.push(b'\n');
    write_atomic(&ws.result_path(run, test_domain), &bytes)?;
    Ok(out)
}

/// Files written by `report`.
pub const REPORT_FILES: [&str; 3] = ["report.csv", "report_summary.csv", "report.txt"];

/// Aggregate every result under the output directory over the configured
/// seeds and write the per-seed CSV, the per-cell CSV and a text table.
pub fn cmd_report(ws: &Workspace) -> Result<AggregateReport> {
    let dir = ws.root().join("results");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results = Vec::new();
    for p in &paths {
        let record: ResultRecord = read_json(p)?;
        if record.config_hash != ws.config_hash {
            return Err(Error::Inconsistent(format!(
                "{} was produced by config {}, not {}",
                p.display(),
                record.config_hash,
                ws.config_hash
            )));
        }
        results.push(record.result);
    }
    if results.is_empty() {
        return Err(Error::Precondition(format!("no results in {}", dir.display())));
    }
    let report = aggregate_seeds(&results, &ws.config.seeds)?;
    let root = ws.root();
    write_atomic(&root.join(REPORT_FILES[0]), report.seeds_csv(&ws.config_hash)?.as_bytes())?;
    write_atomic(&root.join(REPORT_FILES[1]), report.summary_csv(&ws.config_hash)?.as_bytes())?;
    write_atomic(&root.join(REPORT_FILES[2]), report.table(&ws.config_hash).as_bytes())?;
    Ok(report)
}

/// Every (run, test domain) pair the config asks for: each variant × K ×
/// seed on each domain, plus the TALLRec cross-domain grid when enabled.
pub fn plan(config: &ExperimentConfig) -> Vec<(RunSpec, Vec<Domain>)> {
    let mut runs: BTreeMap<RunSpec, Vec<Domain>> = BTreeMap::new();
    let mut add = |run: RunSpec, test: Domain| {
        let tests = runs.entry(run).or_default();
        if !tests.contains(&test) {
            tests.push(test);
        }
    };
    for domain in config.datasets.domains() {
        for &variant in &config.variants {
            for &k in &config.k_grid {
                for &seed in &config.seeds {
                    add(RunSpec { variant, k, train_domain: domain.into(), seed }, domain);
                }
            }
        }
    }
    if config.cross_domain {
        for train_domain in [TrainDomain::Book, TrainDomain::Movie, TrainDomain::Both] {
            for &k in &config.k_grid {
                for &seed in &config.seeds {
                    for test in [Domain::Movie, Domain::Book] {
                        add(RunSpec { variant: Variant::TALLRec, k, train_domain, seed }, test);
                    }
                }
            }
        }
    }
    runs.into_iter().collect()
}

fn result_is_current(ws: &Workspace, run: &RunSpec, test: Domain) -> bool {
    read_json::<ResultRecord>(&ws.result_path(run, test)).is_ok_and(|r| r.config_hash == ws.config_hash)
}

/// Prepare (unless current), train and evaluate the whole plan, then report.
/// Finished runs and results are reused, so an interrupted experiment resumes.
pub fn cmd_experiment(ws: &Workspace, mut progress: impl FnMut(&str)) -> Result<AggregateReport> {
    if !prepared_is_current(ws) {
        progress("preparing data");
        cmd_prepare(ws)?;
    }
    let prepared = load_prepared(ws)?;
    for domain in &prepared.domains {
        for &k in &ws.config.k_grid {
            if k > domain.train.len() {
                return Err(Error::Precondition(format!(
                    "K = {k} exceeds the {} {} training instances",
                    domain.train.len(),
                    domain.domain
                )));
            }
        }
    }
    let plan = plan(&ws.config);
    for (i, (run, tests)) in plan.iter().enumerate() {
        if tests.iter().all(|&t| result_is_current(ws, run, t)) {
            continue;
        }
        progress(&format!("[{}/{}] {}", i + 1, plan.len(), run.key()));
        cmd_train(ws, &prepared, run)?;
        for &test in tests {
            cmd_eval(ws, &prepared, run, test)?;
        }
    }
    cmd_report(ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weight_decay: f64,
    pub seed: u64,
    pub validation_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub domain: Domain,
    pub variant: Variant,
    pub k: usize,
    pub rows: Vec<SweepRow>,
    /// `(weight decay, mean validation AUC)` in grid order.
    pub means: Vec<(f64, f64)>,
    pub selected: f64,
}

/// Weight-decay search: train at every grid value and seed, and select the
/// value with the highest mean best-epoch validation AUC. Earlier grid
/// entries win ties.
pub fn cmd_sweep(ws: &Workspace, domain: Option<Domain>) -> Result<SweepReport> {
    let prepared = load_prepared(ws)?;
    let domain = match domain {
        Some(d) => d,
        None => {
            prepared.domains.first().map(|d| d.domain).ok_or_else(|| Error::Precondition("no prepared data".into()))?
        }
    };
    let data = prepared.domain(domain)?;
    if data.validation.is_empty() {
        return Err(Error::Precondition(format!("{domain} has no validation instances to select on")));
    }
    let cfg = &ws.config;
    let (variant, k) = (cfg.sweep.variant, cfg.sweep_k());
    if !variant.uses_rec() {
        return Err(Error::Config(format!("the sweep selects on rec validation AUC, which {variant} never trains")));
    }
    let base = protocol(ws, &prepared)?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &wd in &cfg.sweep.weight_decays {
        let protocol = Protocol {
            train_general: TrainConfig { weight_decay: wd, ..base.train_general.clone() },
            train_rec: TrainConfig { weight_decay: wd, ..base.train_rec.clone() },
            ..base.clone()
        };
        let mut sum = 0.0;
        for &seed in &cfg.seeds {
            let shots = sample_few_shot(&data.train, k, seed)?;
            let (_, log) = protocol.train(variant, &shots, &data.validation, seed)?;
            let rec = log.rec.ok_or_else(|| Error::Precondition("rec stage did not run".into()))?;
            let auc = rec.epochs.iter().filter_map(|e| e.validation_auc).fold(f64::NAN, f64::max);
            sum += auc;
            rows.push(SweepRow { weight_decay: wd, seed, validation_auc: auc });
        }
        means.push((wd, sum / cfg.seeds.len() as f64));
    }
    let selected = means.iter().fold(None::<(f64, f64)>, |best, &(wd, m)| match best {
        Some((_, bm)) if bm >= m => best,
        _ => Some((wd, m)),
    });
    let selected = selected.ok_or_else(|| Error::Config("empty weight-decay grid".into()))?.0;
    let report = SweepReport { domain, variant, k, rows, means, selected };

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(["weight_decay", "seed", "validation_auc_x100", "selected", "config_hash"]).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            format!("{:e}", r.weight_decay),
            r.seed.to_string(),
            format!("{:.4}", r.validation_auc * 100.0),
            (r.weight_decay == selected).to_string(),
            ws.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(&ws.root().join("sweep.csv"), &bytes)?;
    Ok(report)
}

/// Gradient check of randomized adapters, one report per configured seed.
/// Uses two prepared training instances when available, otherwise two
/// synthetic ones.
pub fn cmd_gradcheck(config: &ExperimentConfig, h: f64, coords: usize) -> Result<Vec<GradCheckReport>> {
    let templates = config.templates()?;
    config
        .seeds
        .iter()
        .map(|&seed| {
            let instances = planted_keyword_instances(Domain::Movie, 2, config.window, true, seed);
            let batch: Vec<TokenSequence> =
                prepare_rec_samples(&instances, &templates, config.window)?.iter().map(pack_pair).collect();
            let mut model = attach_lora(init_model(config.model, config.base_seed)?, &config.lora, seed)?;
            randomize_adapters(&mut model, 0.1, seed)?;
            grad_check(&model, &batch, h, coords, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
seeds = [0, 1]
k_grid = [4]
variants = ["RT"]
window = 3
[datasets.movie]
synthetic = { instances = 40, seed = 1 }
[model]
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16
[lora]
rank = 2
[general]
tasks = 4
validation_tasks = 2
[train.general]
epochs = 1
batch_size = 4
[train.rec]
epochs = 1
batch_size = 4
"#;

    fn workspace(dir: &Path, extra: &str) -> Workspace {
        Workspace::new(ExperimentConfig::from_toml(&format!("{extra}\n{TINY}"), dir).unwrap()).unwrap()
    }

    fn rt(k: usize, seed: u64) -> RunSpec {
        RunSpec { variant: Variant::RT, k, train_domain: TrainDomain::Movie, seed }
    }

    #[test]
    fn run_keys_are_readable() {
        let run = RunSpec { variant: Variant::TALLRec, k: 64, train_domain: TrainDomain::Both, seed: 3 };
        assert_eq!(run.key(), "tallrec-both-k64-s3");
    }

    #[test]
    fn plan_covers_the_grid_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = workspace(dir.path(), "").config;
        cfg.variants = Variant::ALL.to_vec();
        cfg.k_grid = vec![4, 8];
        assert_eq!(plan(&cfg).len(), 3 * 2 * 2);
        cfg.datasets.book = cfg.datasets.movie.clone();
        cfg.cross_domain = true;
        let p = plan(&cfg);
        // Ablation: 2 domains × 3 variants × 2 K × 2 seeds; cross-domain adds the Both runs.
        assert_eq!(p.len(), 24 + 2 * 2);
        let cross =
            p.iter().find(|(r, _)| r.variant == Variant::TALLRec && r.train_domain == TrainDomain::Movie).unwrap();
        assert_eq!(cross.1, [Domain::Movie, Domain::Book]);
    }

    #[test]
    fn prepare_is_deterministic_and_hash_checked() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path(), "");
        let a = cmd_prepare(&ws).unwrap();
        let bytes = std::fs::read(ws.instances_path(Domain::Movie, "train")).unwrap();
        let b = cmd_prepare(&ws).unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, std::fs::read(ws.instances_path(Domain::Movie, "train")).unwrap());
        assert_eq!((a.domains[0].train, a.domains[0].validation, a.domains[0].test), (32, 4, 4));
        assert_eq!(a.files.len(), 5);
        assert_eq!(a.files["prepared/movie/train.jsonl"], sha256_hex(&bytes));

        let other = workspace(dir.path(), "split_seed = 9");
        let err = load_prepared(&other).unwrap_err();
        assert!(err.is_validation() && err.to_string().contains("prepare"), "{err}");
    }

    #[test]
    fn train_eval_report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path(), "");
        cmd_prepare(&ws).unwrap();
        let prepared = load_prepared(&ws).unwrap();

        let err = cmd_train(&ws, &prepared, &rt(33, 0)).unwrap_err();
        assert!(err.is_validation());
        assert!(!ws.run_path(&rt(33, 0)).exists() && !ws.log_path(&rt(33, 0)).exists());
        assert!(load_run_model(&ws, &rt(4, 0)).unwrap_err().is_validation());

        for seed in [0, 1] {
            let record = cmd_train(&ws, &prepared, &rt(4, seed)).unwrap();
            assert_eq!(record.rec_train_size, 4);
            assert_eq!(cmd_train(&ws, &prepared, &rt(4, seed)).unwrap(), record);
            let out = cmd_eval(&ws, &prepared, &rt(4, seed), Domain::Movie).unwrap();
            assert_eq!(out.config_hash, ws.config_hash);
            assert_eq!(out.result.seed, Some(seed));
        }
        let log = std::fs::read_to_string(ws.log_path(&rt(4, 0))).unwrap();
        assert!(log.lines().next().unwrap().contains(&ws.config_hash));

        let report = cmd_report(&ws).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].n_seeds, 2);
        let csv = std::fs::read_to_string(ws.root().join("report.csv")).unwrap();
        assert!(csv.starts_with("variant,K,train_domain,test_domain,seed,auc_x100,config_hash\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn interrupted_run_is_not_registered() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path(), "");
        cmd_prepare(&ws).unwrap();
        let prepared = load_prepared(&ws).unwrap();
        let record = cmd_train(&ws, &prepared, &rt(4, 0)).unwrap();

        // A checkpoint without its registration, as left by a crash between the two writes.
        std::fs::remove_file(ws.run_path(&rt(4, 0))).unwrap();
        assert!(load_registered(&ws, &rt(4, 0)).is_none());
        assert!(load_run_model(&ws, &rt(4, 0)).is_err());
        assert_eq!(cmd_train(&ws, &prepared, &rt(4, 0)).unwrap(), record);

        // A registration whose checkpoint no longer matches is not trusted.
        std::fs::write(ws.root().join(&record.checkpoint), b"{}").unwrap();
        assert!(load_registered(&ws, &rt(4, 0)).is_none());
        assert!(matches!(load_run_model(&ws, &rt(4, 0)), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn report_rejects_foreign_results() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path(), "");
        assert!(cmd_report(&ws).is_err());
        cmd_prepare(&ws).unwrap();
        let prepared = load_prepared(&ws).unwrap();
        cmd_train(&ws, &prepared, &rt(4, 0)).unwrap();
        cmd_eval(&ws, &prepared, &rt(4, 0), Domain::Movie).unwrap();
        // Seed 1 is missing.
        let err = cmd_report(&ws).unwrap_err();
        assert!(err.to_string().contains("missing seeds [1]"), "{err}");

        let path = ws.result_path(&rt(4, 0), Domain::Movie);
        let text = std::fs::read_to_string(&path).unwrap().replace(&ws.config_hash, "deadbeef");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(cmd_report(&ws), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn gradcheck_passes_on_a_small_model() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = workspace(dir.path(), "").config;
        let reports = cmd_gradcheck(&cfg, 1e-5, 10).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.max_rel_error < 1e-4 && r.coords.len() == 10));
    }
}
