use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::eval::{EvalResult, TrainDomain, Variant};

/// Identity of one aggregated cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: Variant,
    pub k: usize,
    pub train_domain: TrainDomain,
    pub test_domain: Domain,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, K={}, train={}, test={})", self.variant, self.k, self.train_domain, self.test_domain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub mean_auc_x100: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_auc_x100: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub seed: u64,
    pub auc_x100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub seeds: Vec<SeedRow>,
}

fn cell_of(r: &EvalResult) -> Result<CellKey> {
    match (r.variant, r.k, r.train_domain) {
        (Some(variant), Some(k), Some(train_domain)) => {
            Ok(CellKey { variant, k, train_domain, test_domain: r.test_domain })
        }
        _ => Err(Error::Inconsistent("result without variant, K or train domain".into())),
    }
}

/// Mean and sample standard deviation of AUC × 100 per cell.
///
/// Every cell must hold exactly one result per expected seed and all of its
/// results must come from the same test set size.
pub fn aggregate_seeds(results: &[EvalResult], expected_seeds: &[u64]) -> Result<AggregateReport> {
    let mut cells: BTreeMap<CellKey, Vec<&EvalResult>> = BTreeMap::new();
    for r in results {
        cells.entry(cell_of(r)?).or_default().push(r);
    }
    let mut expected = expected_seeds.to_vec();
    expected.sort_unstable();

    let mut report = AggregateReport { rows: Vec::new(), seeds: Vec::new() };
    for (cell, mut rs) in cells {
        let Some(seed_list) = rs.iter().map(|r| r.seed).collect::<Option<Vec<u64>>>() else {
            return Err(Error::Inconsistent(format!("cell {cell} has a result without a seed")));
        };
        let mut seen = seed_list.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Inconsistent(format!("cell {cell} has duplicate seeds {seen:?}")));
        }
        if !expected.is_empty() && seen != expected {
            let missing: Vec<u64> = expected.iter().filter(|s| !seen.contains(s)).copied().collect();
            let extra: Vec<u64> = seen.iter().filter(|s| !expected.contains(s)).copied().collect();
            return Err(Error::Inconsistent(format!(
                "cell {cell} is missing seeds {missing:?} (unexpected {extra:?})"
            )));
        }
        if rs.iter().any(|r| (r.n_pos, r.n_neg) != (rs[0].n_pos, rs[0].n_neg)) {
            return Err(Error::Inconsistent(format!("cell {cell} mixes test sets of different composition")));
        }
        rs.sort_by_key(|r| r.seed);
        let values: Vec<f64> = rs.iter().map(|r| r.auc * 100.0).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        report.rows.push(AggregateRow { cell, mean_auc_x100: mean, std_auc_x100: std, n_seeds: values.len() });
        report.seeds.extend(rs.iter().zip(&values).map(|(r, &v)| SeedRow { cell, seed: r.seed.unwrap(), auc_x100: v }));
    }
    Ok(report)
}

impl AggregateReport {
    /// Per-seed CSV: `variant,K,train_domain,test_domain,seed,auc_x100,config_hash`.
    pub fn seeds_csv(&self, config_hash: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(["variant", "K", "train_domain", "test_domain", "seed", "auc_x100", "config_hash"])
            .map_err(csv_err)?;
        for r in &self.seeds {
            w.write_record([
                r.cell.variant.to_string(),
                r.cell.k.to_string(),
                r.cell.train_domain.to_string(),
                r.cell.test_domain.to_string(),
                r.seed.to_string(),
                format!("{:.4}", r.auc_x100),
                config_hash.to_string(),
            ])
            .map_err(csv_err)?;
        }
        into_string(w)
    }

    /// Per-cell CSV: `variant,K,train_domain,test_domain,mean_auc_x100,std_auc_x100,n_seeds,config_hash`.
    pub fn summary_csv(&self, config_hash: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record([
            "variant",
            "K",
            "train_domain",
            "test_domain",
            "mean_auc_x100",
            "std_auc_x100",
            "n_seeds",
            "config_hash",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.cell.variant.to_string(),
                r.cell.k.to_string(),
                r.cell.train_domain.to_string(),
                r.cell.test_domain.to_string(),
                format!("{:.4}", r.mean_auc_x100),
                format!("{:.4}", r.std_auc_x100),
                r.n_seeds.to_string(),
                config_hash.to_string(),
            ])
            .map_err(csv_err)?;
        }
        into_string(w)
    }

    /// Fixed-width table of the per-cell summary.
    pub fn table(&self, config_hash: &str) -> String {
        let mut out = format!("config {config_hash}\n");
        let _ =
            writeln!(out, "{:<8} {:>5} {:<6} {:<6} {:>15} {:>6}", "variant", "K", "train", "test", "AUC x100", "seeds");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>5} {:<6} {:<6} {:>7.2} ± {:<5.2} {:>6}",
                r.cell.variant.to_string(),
                r.cell.k,
                r.cell.train_domain.to_string(),
                r.cell.test_domain.to_string(),
                r.mean_auc_x100,
                r.std_auc_x100,
                r.n_seeds
            );
        }
        out
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(auc: f64, seed: u64) -> EvalResult {
        EvalResult {
            auc,
            n_pos: 10,
            n_neg: 10,
            variant: Some(Variant::TALLRec),
            k: Some(16),
            train_domain: Some(TrainDomain::Movie),
            test_domain: Domain::Movie,
            seed: Some(seed),
            scores: Vec::new(),
        }
    }

    #[test]
    fn constant_aucs_have_zero_spread() {
        let rs: Vec<_> = (0..5).map(|s| result(0.62, s)).collect();
        let report = aggregate_seeds(&rs, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!((report.rows[0].mean_auc_x100 - 62.0).abs() < 1e-12);
        assert!(report.rows[0].std_auc_x100.abs() < 1e-12);
        assert_eq!(report.rows[0].n_seeds, 5);
    }

    #[test]
    fn two_values_average() {
        let report = aggregate_seeds(&[result(0.5, 0), result(0.7, 1)], &[0, 1]).unwrap();
        assert!((report.rows[0].mean_auc_x100 - 60.0).abs() < 1e-12);
        assert!((report.rows[0].std_auc_x100 - 200f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn missing_seed_names_the_cell() {
        let err = aggregate_seeds(&[result(0.5, 0), result(0.7, 1)], &[0, 1, 2]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("TALLRec") && msg.contains("K=16") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn inconsistent_cells_are_rejected() {
        let mut odd = result(0.7, 1);
        odd.n_pos = 11;
        assert!(aggregate_seeds(&[result(0.5, 0), odd], &[0, 1]).is_err());
        assert!(aggregate_seeds(&[result(0.5, 0), result(0.5, 0)], &[0]).is_err());
        let mut anon = result(0.5, 0);
        anon.variant = None;
        assert!(aggregate_seeds(&[anon], &[0]).is_err());
    }

    #[test]
    fn csv_has_the_declared_columns() {
        let report = aggregate_seeds(&[result(0.5, 0), result(0.75, 1)], &[0, 1]).unwrap();
        let csv = report.seeds_csv("abc").unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("variant,K,train_domain,test_domain,seed,auc_x100,config_hash"));
        assert_eq!(lines.next(), Some("TALLRec,16,movie,movie,0,50.0000,abc"));
        assert_eq!(lines.next(), Some("TALLRec,16,movie,movie,1,75.0000,abc"));
        assert!(report.table("abc").contains("62.50"));
    }
}
