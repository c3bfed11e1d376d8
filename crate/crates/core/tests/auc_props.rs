use proptest::prelude::*;
use tallrec::eval::{auc_count, auc_scores, AucCount};

/// Pairwise count: 2 per (positive, negative) pair ranked correctly, 1 per tie.
fn oracle(scores: &[f64], labels: &[bool]) -> AucCount {
    let mut twice_u = 0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                twice_u += match si.partial_cmp(&sj).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    AucCount { twice_u, positives, negatives: labels.len() as u64 - positives }
}

/// Scores on a coarse grid so ties are common, with both classes present.
fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max).prop_flat_map(|n| (prop::collection::vec(0u8..12, n), prop::collection::vec(any::<bool>(), n))).prop_map(
        |(grid, mut labels)| {
            labels[0] = true;
            labels[1] = false;
            (grid.into_iter().map(|g| f64::from(g) / 11.0).collect(), labels)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fast_path_equals_pair_counting((scores, labels) in scored(500)) {
        prop_assert_eq!(auc_count(&scores, &labels).unwrap(), oracle(&scores, &labels));
    }

    #[test]
    fn continuous_scores_equal_pair_counting(
        raw in prop::collection::vec((-1e6f64..1e6, any::<bool>()), 2..200),
    ) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        prop_assert_eq!(auc_count(&scores, &labels).unwrap(), oracle(&scores, &labels));
    }

    #[test]
    fn strictly_monotone_transforms_preserve_auc((scores, labels) in scored(200), scale in 0.1f64..10.0) {
        let a = auc_scores(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (scale * s).exp() - 3.0).collect();
        prop_assert_eq!(a, auc_scores(&transformed, &labels).unwrap());
        let cubed: Vec<f64> = scores.iter().map(|s| (s - 0.5).powi(3)).collect();
        prop_assert_eq!(a, auc_scores(&cubed, &labels).unwrap());
    }

    #[test]
    fn flipping_labels_and_scores_preserves_auc((scores, labels) in scored(200)) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let complement: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        prop_assert_eq!(auc_count(&scores, &labels).unwrap().twice_u, auc_count(&complement, &flipped).unwrap().twice_u);
    }
}

#[test]
fn edge_cases() {
    for n in [2, 3, 10, 500] {
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        assert_eq!(auc_scores(&vec![0.3; n], &labels).unwrap(), 0.5);
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 0.9 } else { 0.1 }).collect();
        assert_eq!(auc_scores(&perfect, &labels).unwrap(), 1.0);
        let inverted: Vec<f64> = perfect.iter().map(|s| 1.0 - s).collect();
        assert_eq!(auc_scores(&inverted, &labels).unwrap(), 0.0);
    }
    assert!(auc_scores(&[0.1, 0.2], &[true, true]).unwrap_err().is_validation());
}
