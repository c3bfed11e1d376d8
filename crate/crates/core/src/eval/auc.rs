use serde::{Deserialize, Serialize};

use super::scoring::ScoredInstance;
use crate::error::{Error, Result};

/// AUC as an exact ratio: `twice_u / (2 · positives · negatives)`, where
/// `twice_u` counts each winning (positive, negative) pair twice and each
/// tied pair once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AucCount {
    pub twice_u: u64,
    pub positives: u64,
    pub negatives: u64,
}

impl AucCount {
    pub fn value(&self) -> f64 {
        self.twice_u as f64 / (2 * self.positives * self.negatives) as f64
    }
}

/// Mann–Whitney U via midranks, `O(n log n)`.
pub fn auc_count(scores: &[f64], labels: &[bool]) -> Result<AucCount> {
    if scores.len() != labels.len() {
        return Err(Error::Precondition(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Precondition(format!("non-finite score {bad}")));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc { positives: positives as usize, negatives: negatives as usize });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum over positives of twice the 1-based midrank
    let mut twice_rank_sum = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_mid = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end;
    }
    let twice_u = twice_rank_sum - positives * (positives + 1);
    Ok(AucCount { twice_u, positives, negatives })
}

pub fn auc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(auc_count(scores, labels)?.value())
}

pub fn auc(scored: &[ScoredInstance]) -> Result<f64> {
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label.is_like()).collect();
    auc_scores(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(auc_scores(&[0.9, 0.2, 0.7], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc_scores(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        // pairs: (0.9 > 0.8) wins, (0.7 < 0.8) loses
        assert_eq!(auc_scores(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc_scores(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedAuc { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn rejects_nan() {
        assert!(auc_scores(&[f64::NAN, 0.2], &[true, false]).is_err());
    }
}
