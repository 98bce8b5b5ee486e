use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-split classification quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Fraction of correct predictions in `[0, 1]`.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, per-class F1 and macro-F1; a class with no true positives scores F1 = 0.
pub fn classification_metrics(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    if truth.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("cannot score an empty split".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for l in [t, p] {
            if l >= classes {
                return Err(Error::Label { label: l, classes });
            }
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_f1: Vec<f64> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
            let actual_c: usize = confusion[c].iter().sum();
            if tp == 0.0 {
                0.0
            } else {
                let precision = tp / predicted_c as f64;
                let recall = tp / actual_c as f64;
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / classes as f64,
        per_class_f1,
        confusion,
    })
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f1_oracle(tp: f64, fp: f64, fneg: f64) -> f64 {
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    }

    #[test]
    fn constant_predictor_on_balanced_three_classes() {
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let pred = vec![0; 30];
        let m = classification_metrics(&truth, &pred, 3).unwrap();
        assert_eq!(m.confusion, vec![vec![10, 0, 0], vec![10, 0, 0], vec![10, 0, 0]]);
        assert!((m.per_class_f1[0] - 0.5).abs() < 1e-15);
        assert_eq!(&m.per_class_f1[1..], &[0.0, 0.0]);
        assert!((m.macro_f1 - 1.0 / 6.0).abs() < 1e-15);
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_matches_count_formula() {
        let truth = [0, 0, 0, 1, 1, 2, 2, 2, 2, 1];
        let pred = [0, 1, 0, 1, 2, 2, 0, 2, 2, 1];
        let m = classification_metrics(&truth, &pred, 3).unwrap();
        for c in 0..3 {
            let tp = truth.iter().zip(&pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
            let fp = truth.iter().zip(&pred).filter(|(&t, &p)| t != c && p == c).count() as f64;
            let fneg = truth.iter().zip(&pred).filter(|(&t, &p)| t == c && p != c).count() as f64;
            assert!((m.per_class_f1[c] - f1_oracle(tp, fp, fneg)).abs() < 1e-15);
        }
        assert!((m.accuracy - 0.7).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(classification_metrics(&[0], &[0, 1], 2).is_err());
        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(matches!(
            classification_metrics(&[0], &[3], 2),
            Err(Error::Label { label: 3, .. })
        ));
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
