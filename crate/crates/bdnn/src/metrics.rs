//! Confusion-matrix metrics for binary classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary metrics (positive class = label 1) plus unweighted two-class means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Computes [`Metrics`] from aligned prediction/label vectors.
pub fn evaluate_metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metrics("need at least one prediction".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = predictions.len() as f64;
    let accuracy = (tp + tn) as f64 / total;
    let (precision, recall, f1) = prf(tp, fp, fn_);
    // Class 0 viewed as the positive class for the macro average.
    let (p0, r0, f0) = prf(tn, fn_, fp);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        macro_precision: (precision + p0) / 2.0,
        macro_recall: (recall + r0) / 2.0,
        macro_f1: (f1 + f0) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let m = evaluate_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_positive_rule() {
        let m = evaluate_metrics(&[1, 1, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rule_scores_zero() {
        let m = evaluate_metrics(&[0, 0], &[1, 1]).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(evaluate_metrics(&[1], &[1, 0]).is_err());
        assert!(evaluate_metrics(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn all_values_in_unit_interval(
            preds in proptest::collection::vec(0u8..2, 1..40),
            seed in 0u64..1000,
        ) {
            let labels: Vec<u8> = preds
                .iter()
                .enumerate()
                .map(|(i, _)| ((seed >> (i % 40)) & 1) as u8)
                .collect();
            let m = evaluate_metrics(&preds, &labels).unwrap();
            for v in [m.accuracy, m.precision, m.recall, m.f1, m.macro_precision, m.macro_recall, m.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
