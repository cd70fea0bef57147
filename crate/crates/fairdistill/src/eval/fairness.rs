//! Group fairness ratios and plain classification utility scores.

use serde::{Deserialize, Serialize};

use super::EvalError;

fn group_counts(
    s: &[usize],
    num_groups: usize,
    mut keep: impl FnMut(usize) -> bool,
    mut hit: impl FnMut(usize) -> bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut totals = vec![0.0; num_groups];
    let mut hits = vec![0.0; num_groups];
    for (i, &g) in s.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        totals[g] += 1.0;
        if hit(i) {
            hits[g] += 1.0;
        }
    }
    (totals, hits)
}

/// min/max ratio over per-group rates. Groups without any conditioning rows
/// are skipped; at least two must remain. A uniformly zero rate counts as
/// perfectly balanced (ratio 1).
fn rate_ratio(totals: &[f64], hits: &[f64], what: &str) -> Result<f64, EvalError> {
    let rates: Vec<f64> = totals
        .iter()
        .zip(hits)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, h)| h / t)
        .collect();
    if rates.len() < 2 {
        return Err(EvalError::InsufficientGroups {
            what: what.to_string(),
            populated: rates.len(),
        });
    }
    let max = rates.iter().cloned().fold(f64::MIN, f64::max);
    let min = rates.iter().cloned().fold(f64::MAX, f64::min);
    if max == 0.0 {
        Ok(1.0)
    } else {
        Ok(min / max)
    }
}

/// Demographic parity ratio: the worst-case ratio of positive-prediction
/// rates between protected groups. 1 means parity, 0 means some group is
/// never selected while another is.
pub fn demographic_parity_ratio(
    pred: &[u8],
    s: &[usize],
    num_groups: usize,
) -> Result<f64, EvalError> {
    if pred.len() != s.len() {
        return Err(EvalError::Shape(format!(
            "predictions ({}) do not match groups ({})",
            pred.len(),
            s.len()
        )));
    }
    let (totals, hits) = group_counts(s, num_groups, |_| true, |i| pred[i] == 1);
    rate_ratio(&totals, &hits, "selection rate")
}

/// Equalized odds ratio: the smaller of the worst-case true-positive-rate
/// ratio and false-positive-rate ratio across groups. Each rate only
/// considers groups that contain the conditioning class.
pub fn equalized_odds_ratio(
    pred: &[u8],
    y: &[u8],
    s: &[usize],
    num_groups: usize,
) -> Result<f64, EvalError> {
    if pred.len() != y.len() || y.len() != s.len() {
        return Err(EvalError::Shape(format!(
            "predictions ({}), labels ({}), groups ({}) must align",
            pred.len(),
            y.len(),
            s.len()
        )));
    }
    let (pos_totals, tp) = group_counts(s, num_groups, |i| y[i] == 1, |i| pred[i] == 1);
    let (neg_totals, fp) = group_counts(s, num_groups, |i| y[i] == 0, |i| pred[i] == 1);
    let tpr_ratio = rate_ratio(&pos_totals, &tp, "true positive rate")?;
    let fpr_ratio = rate_ratio(&neg_totals, &fp, "false positive rate")?;
    Ok(tpr_ratio.min(fpr_ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScores {
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, recall, and F1 of hard predictions against reference labels.
/// Undefined rates (no positives, nothing predicted positive) score zero
/// rather than erroring, so degenerate classifiers are comparable.
pub fn utility_scores(pred: &[u8], y: &[u8]) -> Result<UtilityScores, EvalError> {
    if pred.len() != y.len() {
        return Err(EvalError::Shape(format!(
            "predictions ({}) do not match labels ({})",
            pred.len(),
            y.len()
        )));
    }
    if pred.is_empty() {
        return Err(EvalError::TooFewRows {
            got: 0,
            need: 1,
            what: "utility evaluation".into(),
        });
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fne = 0.0;
    let mut correct = 0.0;
    for (&p, &t) in pred.iter().zip(y) {
        if p == t {
            correct += 1.0;
        }
        match (p, t) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fne += 1.0,
            _ => {}
        }
    }
    let accuracy = correct / y.len() as f64;
    let recall = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(UtilityScores {
        accuracy,
        recall,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dpr_hand_example() {
        // Group 0: 3 of 4 selected; group 1: 1 of 4 selected -> 0.25 / 0.75.
        let pred = [1, 1, 1, 0, 1, 0, 0, 0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let dpr = demographic_parity_ratio(&pred, &s, 2).unwrap();
        assert!((dpr - (0.25 / 0.75)).abs() < 1e-12);
    }

    #[test]
    fn dpr_perfect_parity_is_one() {
        let pred = [1, 0, 1, 0];
        let s = [0, 0, 1, 1];
        assert_eq!(demographic_parity_ratio(&pred, &s, 2).unwrap(), 1.0);
    }

    #[test]
    fn dpr_all_zero_rates_count_as_parity() {
        let pred = [0, 0, 0, 0];
        let s = [0, 0, 1, 1];
        assert_eq!(demographic_parity_ratio(&pred, &s, 2).unwrap(), 1.0);
    }

    #[test]
    fn dpr_needs_two_populated_groups() {
        let pred = [1, 0];
        let s = [0, 0];
        assert!(matches!(
            demographic_parity_ratio(&pred, &s, 2),
            Err(EvalError::InsufficientGroups { .. })
        ));
    }

    #[test]
    fn eor_hand_example() {
        // Group 0: TPR 1.0 (2/2), FPR 0.5 (1/2).
        // Group 1: TPR 0.5 (1/2), FPR 0.5 (1/2).
        // TPR ratio 0.5, FPR ratio 1.0 -> EOR 0.5.
        let pred = [1, 1, 1, 0, 1, 0, 1, 0];
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let eor = equalized_odds_ratio(&pred, &y, &s, 2).unwrap();
        assert!((eor - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eor_equal_classifier_scores_one() {
        let pred = [1, 0, 1, 0, 1, 0, 1, 0];
        let y = [1, 0, 1, 0, 1, 0, 1, 0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(equalized_odds_ratio(&pred, &y, &s, 2).unwrap(), 1.0);
    }

    #[test]
    fn utility_hand_example() {
        // tp=2 fp=1 fn=1 tn=2: acc 4/6, recall 2/3, precision 2/3, f1 2/3.
        let pred = [1, 1, 1, 0, 0, 0];
        let y = [1, 1, 0, 1, 0, 0];
        let u = utility_scores(&pred, &y).unwrap();
        assert!((u.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert!((u.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((u.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn utility_degenerate_cases_score_zero() {
        let u = utility_scores(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(u.accuracy, 1.0);
        assert_eq!(u.recall, 0.0);
        assert_eq!(u.f1, 0.0);

        let u = utility_scores(&[0, 0, 0], &[1, 1, 1]).unwrap();
        assert_eq!(u.accuracy, 0.0);
        assert_eq!(u.recall, 0.0);
        assert_eq!(u.f1, 0.0);
    }
}
