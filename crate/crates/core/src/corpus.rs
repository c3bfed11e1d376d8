//! Interaction logs to labeled history windows.
//!
//! Raw delimited logs are loaded through a [`Schema`], ratings are binarized
//! against a threshold, and each prediction target is paired with a window
//! of earlier (or randomly sampled) interactions. The resulting
//! [`RecInstance`]s are padded to a fixed length, split 8:1:1 and subsampled
//! for K-shot training.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

/// Default history window length.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
    pub item_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    Like,
    Dislike,
}

impl Preference {
    /// The answer token text used on the wire: "Yes" for like, "No" otherwise.
    pub fn as_answer(self) -> &'static str {
        match self {
            Preference::Like => "Yes",
            Preference::Dislike => "No",
        }
    }

    pub fn from_answer(s: &str) -> Result<Self> {
        match s {
            "Yes" => Ok(Preference::Like),
            "No" => Ok(Preference::Dislike),
            other => Err(Error::Serde(format!("label must be \"Yes\" or \"No\", got {other:?}"))),
        }
    }

    pub fn is_like(self) -> bool {
        self == Preference::Like
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Movie,
    Book,
}

impl Domain {
    pub fn noun(self) -> &'static str {
        match self {
            Domain::Movie => "movie",
            Domain::Book => "book",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub item_id: String,
    pub text: String,
    pub label: Preference,
}

/// One prediction unit: a labeled history, a target item and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecInstance {
    /// Oldest to newest.
    pub history: Vec<HistoryEntry>,
    pub target_id: String,
    pub target_text: String,
    pub label: Preference,
    pub domain: Domain,
    pub user: String,
    /// Timestamp of the target interaction when the log has one. Not part of
    /// the JSON-lines interchange.
    pub target_timestamp: Option<i64>,
}

impl RecInstance {
    pub fn target_in_history(&self) -> bool {
        self.history.iter().any(|h| h.item_id == self.target_id)
    }
}

/// Inclusive rating bounds declared by a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingRange {
    pub min: f64,
    pub max: f64,
}

impl RatingRange {
    pub const MOVIE: RatingRange = RatingRange { min: 1.0, max: 5.0 };
    pub const BOOK: RatingRange = RatingRange { min: 1.0, max: 10.0 };

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }
}

/// Column mapping for a delimited interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub user: String,
    pub item: String,
    pub rating: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub text: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    /// `user_id,item_id,rating,timestamp,title`, comma separated.
    pub fn movie_default() -> Self {
        Schema {
            user: "user_id".into(),
            item: "item_id".into(),
            rating: "rating".into(),
            timestamp: Some("timestamp".into()),
            text: "title".into(),
            delimiter: ',',
        }
    }

    /// Same columns without a timestamp.
    pub fn book_default() -> Self {
        Schema { timestamp: None, ..Schema::movie_default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<InteractionRecord>,
    pub skipped_missing: usize,
    pub skipped_range: usize,
    pub issues: Vec<RowIssue>,
}

impl LoadReport {
    pub fn skipped(&self) -> usize {
        self.skipped_missing + self.skipped_range
    }
}

/// Load a delimited interaction log from disk.
pub fn load_interactions(path: &Path, schema: &Schema, range: RatingRange) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(file, schema, range).map_err(|e| match e {
        Error::Csv { message, .. } => Error::Csv { path: path.to_path_buf(), message },
        other => other,
    })
}

/// Parse a delimited interaction log. Rows with missing mandatory fields or
/// out-of-range ratings are skipped and counted.
pub fn read_interactions<R: Read>(reader: R, schema: &Schema, range: RatingRange) -> Result<LoadReport> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::Config(format!("delimiter {:?} is not a single byte", schema.delimiter)))?;
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).from_reader(reader);
    let csv_err = |e: csv::Error| Error::Csv { path: "<reader>".into(), message: e.to_string() };

    let headers = rdr.headers().map_err(csv_err)?.clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let mut column = |name: &str| {
        let p = position(name);
        if p.is_none() {
            missing.push(name.to_string());
        }
        p
    };
    let user_col = column(&schema.user);
    let item_col = column(&schema.item);
    let rating_col = column(&schema.rating);
    let text_col = column(&schema.text);
    let ts_col = schema.timestamp.as_deref().map(&mut column);
    if !missing.is_empty() {
        return Err(Error::Schema { missing });
    }
    let (user_col, item_col, rating_col, text_col) =
        (user_col.unwrap(), item_col.unwrap(), rating_col.unwrap(), text_col.unwrap());
    let ts_col = ts_col.flatten();

    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_err)?;
        let field = |c: usize| row.get(c).map(str::trim).filter(|s| !s.is_empty());
        let (Some(user), Some(item), Some(rating), Some(text)) =
            (field(user_col), field(item_col), field(rating_col), field(text_col))
        else {
            report.skipped_missing += 1;
            report.issues.push(RowIssue { row: row_no, reason: "missing mandatory field".into() });
            continue;
        };
        let Ok(rating) = rating.parse::<f64>() else {
            report.skipped_missing += 1;
            report.issues.push(RowIssue { row: row_no, reason: format!("unparseable rating {rating:?}") });
            continue;
        };
        if !range.contains(rating) {
            report.skipped_range += 1;
            report.issues.push(RowIssue {
                row: row_no,
                reason: format!("rating {rating} outside [{}, {}]", range.min, range.max),
            });
            continue;
        }
        let timestamp = match ts_col.and_then(field) {
            Some(ts) => match ts.parse::<i64>() {
                Ok(t) => Some(t),
                Err(_) => {
                    report.skipped_missing += 1;
                    report.issues.push(RowIssue { row: row_no, reason: format!("unparseable timestamp {ts:?}") });
                    continue;
                }
            },
            None => None,
        };
        report.records.push(InteractionRecord {
            user_id: user.to_string(),
            item_id: item.to_string(),
            rating,
            timestamp,
            item_text: text.to_string(),
        });
    }
    Ok(report)
}

/// Like iff `rating > threshold`.
pub fn binarize_rating(rating: f64, threshold: f64) -> Preference {
    if rating > threshold {
        Preference::Like
    } else {
        Preference::Dislike
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Every interaction with at least one predecessor becomes a target;
    /// requires timestamps.
    Chronological,
    /// One seeded-random target per user with a seeded-random history.
    RandomSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub window: usize,
    pub mode: WindowMode,
    pub threshold: f64,
    pub domain: Domain,
}

#[derive(Debug, Clone, Default)]
pub struct WindowReport {
    pub instances: Vec<RecInstance>,
    /// Users with fewer than two interactions.
    pub users_skipped: usize,
    /// Targets dropped because every candidate history item was the target itself.
    pub targets_skipped: usize,
}

/// Group records by user in first-appearance order.
fn group_by_user(records: &[InteractionRecord]) -> Vec<Vec<&InteractionRecord>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&InteractionRecord>> = Vec::new();
    for r in records {
        let slot = *index.entry(r.user_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(r);
    }
    groups
}

fn entry(r: &InteractionRecord, threshold: f64) -> HistoryEntry {
    HistoryEntry { item_id: r.item_id.clone(), text: r.item_text.clone(), label: binarize_rating(r.rating, threshold) }
}

/// Build prediction instances with up to `spec.window` history items each.
///
/// Histories never contain the target item; repeated non-target items are kept.
pub fn build_history_windows(records: &[InteractionRecord], spec: &WindowSpec, seed: u64) -> Result<WindowReport> {
    if spec.window == 0 {
        return Err(Error::Precondition("window must be at least 1".into()));
    }
    let mut report = WindowReport::default();
    match spec.mode {
        WindowMode::Chronological => {
            if let Some(r) = records.iter().find(|r| r.timestamp.is_none()) {
                return Err(Error::Precondition(format!(
                    "chronological windows need timestamps; user {} item {} has none",
                    r.user_id, r.item_id
                )));
            }
            for mut events in group_by_user(records) {
                if events.len() < 2 {
                    report.users_skipped += 1;
                    continue;
                }
                events.sort_by_key(|r| r.timestamp);
                for (j, target) in events.iter().enumerate().skip(1) {
                    let prior: Vec<&InteractionRecord> =
                        events[..j].iter().copied().filter(|r| r.item_id != target.item_id).collect();
                    if prior.is_empty() {
                        report.targets_skipped += 1;
                        continue;
                    }
                    let start = prior.len().saturating_sub(spec.window);
                    report.instances.push(RecInstance {
                        history: prior[start..].iter().map(|r| entry(r, spec.threshold)).collect(),
                        target_id: target.item_id.clone(),
                        target_text: target.item_text.clone(),
                        label: binarize_rating(target.rating, spec.threshold),
                        domain: spec.domain,
                        user: target.user_id.clone(),
                        target_timestamp: target.timestamp,
                    });
                }
            }
        }
        WindowMode::RandomSample => {
            let mut rng = seeded(seed, Stream::Windows);
            for events in group_by_user(records) {
                if events.len() < 2 {
                    report.users_skipped += 1;
                    continue;
                }
                let target = events[rng.random_range(0..events.len())];
                let candidates: Vec<usize> =
                    (0..events.len()).filter(|&i| events[i].item_id != target.item_id).collect();
                if candidates.is_empty() {
                    report.targets_skipped += 1;
                    continue;
                }
                let take = candidates.len().min(spec.window);
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), take)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect();
                picked.sort_unstable();
                report.instances.push(RecInstance {
                    history: picked.iter().map(|&i| entry(events[i], spec.threshold)).collect(),
                    target_id: target.item_id.clone(),
                    target_text: target.item_text.clone(),
                    label: binarize_rating(target.rating, spec.threshold),
                    domain: spec.domain,
                    user: target.user_id.clone(),
                    target_timestamp: target.timestamp,
                });
            }
        }
    }
    Ok(report)
}

/// Keep the `n` instances whose targets are the most recent interactions,
/// in their original relative order. Instances without a timestamp sort
/// before every timestamped one.
pub fn most_recent(instances: Vec<RecInstance>, n: usize) -> Vec<RecInstance> {
    if instances.len() <= n {
        return instances;
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by_key(|&i| (instances[i].target_timestamp, i));
    let mut keep = vec![false; instances.len()];
    for &i in &order[order.len() - n..] {
        keep[i] = true;
    }
    instances.into_iter().zip(keep).filter_map(|(inst, k)| k.then_some(inst)).collect()
}

/// Append copies of the last history entry until the history has `window` items.
pub fn pad_history(instance: &RecInstance, window: usize) -> Result<RecInstance> {
    let Some(last) = instance.history.last() else {
        return Err(Error::Precondition("cannot pad an empty history".into()));
    };
    if instance.history.len() > window {
        return Err(Error::Precondition(format!("history length {} exceeds window {window}", instance.history.len())));
    }
    let mut padded = instance.clone();
    padded.history.resize(window, last.clone());
    Ok(padded)
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<RecInstance>,
    pub validation: Vec<RecInstance>,
    pub test: Vec<RecInstance>,
    pub ratios: [usize; 3],
    pub seed: u64,
}

pub const DEFAULT_RATIOS: [usize; 3] = [8, 1, 1];

/// Seeded shuffle followed by a contiguous train/validation/test partition.
pub fn split_dataset(instances: &[RecInstance], ratios: [usize; 3], seed: u64) -> Result<DatasetSplits> {
    let total: usize = ratios.iter().sum();
    if total == 0 || ratios.contains(&0) {
        return Err(Error::Precondition(format!("split ratios must all be positive, got {ratios:?}")));
    }
    let n = instances.len();
    if n < total {
        return Err(Error::Precondition(format!("need at least {total} instances to split {ratios:?}, got {n}")));
    }
    let share = |r: usize| ((n * r) as f64 / total as f64).round() as usize;
    let n_val = share(ratios[1]).max(1);
    let n_test = share(ratios[2]).max(1);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, Stream::Split));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| instances[i].clone()).collect();
    Ok(DatasetSplits {
        train: pick(0..n_train),
        validation: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
        ratios,
        seed,
    })
}

/// Draw `k` distinct training instances uniformly without replacement.
pub fn sample_few_shot(train: &[RecInstance], k: usize, seed: u64) -> Result<Vec<RecInstance>> {
    if k == 0 || k > train.len() {
        return Err(Error::Precondition(format!("K must lie in 1..={}, got {k}", train.len())));
    }
    let mut rng = seeded(seed, Stream::FewShot);
    Ok(rand::seq::index::sample(&mut rng, train.len(), k).into_iter().map(|i| train[i].clone()).collect())
}

/// Concatenate two domains and shuffle with `seed`.
pub fn merge_domains(a: &[RecInstance], b: &[RecInstance], seed: u64) -> Vec<RecInstance> {
    let mut merged: Vec<RecInstance> = a.iter().chain(b).cloned().collect();
    merged.shuffle(&mut seeded(seed, Stream::Merge));
    merged
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryLine {
    text: String,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    history: Vec<HistoryLine>,
    target: String,
    label: String,
    domain: Domain,
    user: String,
}

/// Write instances as JSON lines with fields `history`, `target`, `label`,
/// `domain`, `user`.
pub fn write_instances_jsonl<W: Write>(mut out: W, instances: &[RecInstance]) -> Result<()> {
    for inst in instances {
        let line = InstanceLine {
            history: inst
                .history
                .iter()
                .map(|h| HistoryLine { text: h.text.clone(), label: h.label.as_answer().into() })
                .collect(),
            target: inst.target_text.clone(),
            label: inst.label.as_answer().into(),
            domain: inst.domain,
            user: inst.user.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Read instances written by [`write_instances_jsonl`]. Item ids are not
/// part of the interchange, so item texts stand in for them.
pub fn read_instances_jsonl<R: BufRead>(input: R) -> Result<Vec<RecInstance>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InstanceLine = serde_json::from_str(&line)?;
        let history = parsed
            .history
            .into_iter()
            .map(|h| {
                Ok(HistoryEntry { item_id: h.text.clone(), text: h.text, label: Preference::from_answer(&h.label)? })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RecInstance {
            history,
            target_id: parsed.target.clone(),
            target_text: parsed.target,
            label: Preference::from_answer(&parsed.label)?,
            domain: parsed.domain,
            user: parsed.user,
            target_timestamp: None,
        });
    }
    Ok(out)
}
