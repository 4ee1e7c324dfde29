//! ROC curves and the area under them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve together with the curve itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub dataset: String,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub roc_points: Vec<(f64, f64)>,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut positives = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => positives += 1,
            other => return Err(Error::Label(other)),
        }
    }
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mann-Whitney AUC: the fraction of positive/negative pairs in which the
/// positive scores higher, ties counting one half. Computed from midranks in
/// O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (positives, negatives) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of ranks of the positives, with tied groups sharing their mean rank.
    // Ranks are kept doubled so every value stays an exact integer.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].total_cmp(&scores[order[start]]) == Ordering::Equal {
            end += 1;
        }
        // 1-based ranks start+1 ..= end; doubled mean = start + 1 + end.
        let doubled_mid = (start + 1 + end) as u128;
        let group_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        doubled_rank_sum += doubled_mid * group_pos;
        start = end;
    }
    let p = positives as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// ROC points at every distinct score threshold, descending. Tied scores
/// move the curve in a single diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (positives, negatives) = class_counts(scores, labels)?;
    let order = descending(scores);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&threshold) == Ordering::Equal {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of ROC points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Literal O(P·N) pairwise count. Independent check on [`auc`]; use only
/// on small inputs.
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (positives, negatives) = class_counts(scores, labels)?;
    let mut doubled_wins = 0u64;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            if sp > sn {
                doubled_wins += 2;
            } else if sp == sn {
                doubled_wins += 1;
            }
        }
    }
    Ok(doubled_wins as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// AUC plus ROC curve for one scored dataset.
pub fn evaluate(scores: &[f64], labels: &[u8], dataset: &str) -> Result<AucReport> {
    let (positives, negatives) = class_counts(scores, labels)?;
    Ok(AucReport {
        dataset: dataset.to_string(),
        auc: auc(scores, labels)?,
        positives,
        negatives,
        roc_points: roc_curve(scores, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert_eq!(auc_pairwise_oracle(&s, &l).unwrap(), 0.75);
        assert_eq!(
            roc_curve(&s, &l).unwrap(),
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(
            roc_curve(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(),
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(auc_pairwise_oracle(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(auc(&[0.1, 0.2], &[0, 0]), Err(Error::SingleClass { .. })));
        assert!(matches!(auc_pairwise_oracle(&[0.1, 0.2], &[0, 0]), Err(Error::SingleClass { .. })));
        assert!(matches!(roc_curve(&[0.1], &[1]), Err(Error::SingleClass { .. })));
        assert!(matches!(auc(&[0.1, 0.2], &[0, 2]), Err(Error::Label(2))));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..8, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 8.0).collect()),
                proptest::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn three_way_agreement((s, l) in instance()) {
            let a = auc(&s, &l).unwrap();
            let o = auc_pairwise_oracle(&s, &l).unwrap();
            let t = trapezoid_area(&roc_curve(&s, &l).unwrap());
            prop_assert!((a - o).abs() <= 1e-12);
            prop_assert!((a - t).abs() <= 1e-12);
        }

        #[test]
        fn monotone_transform_invariant((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn label_swap_complements((s, l) in instance()) {
            let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
            prop_assert!((auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn roc_is_monotone((s, l) in instance()) {
            let pts = roc_curve(&s, &l).unwrap();
            prop_assert_eq!(pts[0], (0.0, 0.0));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }
    }
}
