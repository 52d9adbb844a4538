//! Classification metrics: micro/macro accuracy, per-class recall, and
//! the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub n_classes: usize,
    /// Fraction of all samples predicted correctly.
    pub accuracy_micro: f64,
    /// Mean per-class recall over classes that appear in the truth.
    pub accuracy_macro: f64,
    pub per_class_accuracy: Vec<f64>,
    /// confusion[t][p] counts samples of true class t predicted as p.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    if let Some(&bad) = truth.iter().chain(predicted.iter()).find(|&&l| l >= n_classes) {
        return Err(Error::Label(format!(
            "label {} out of range for {} classes",
            bad, n_classes
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted.iter()) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut per_class = vec![0.0; n_classes];
    let mut macro_sum = 0.0;
    let mut macro_count = 0usize;
    for c in 0..n_classes {
        let total: usize = confusion[c].iter().sum();
        if total > 0 {
            per_class[c] = confusion[c][c] as f64 / total as f64;
            macro_sum += per_class[c];
            macro_count += 1;
        } else {
            per_class[c] = f64::NAN;
        }
    }
    Ok(Metrics {
        n: truth.len(),
        n_classes,
        accuracy_micro: correct as f64 / truth.len() as f64,
        accuracy_macro: macro_sum / macro_count as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = evaluate(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.accuracy_micro, 1.0);
        assert_eq!(m.accuracy_macro, 1.0);
        assert_eq!(m.confusion[1][1], 2);
    }

    #[test]
    fn macro_differs_from_micro_under_imbalance() {
        // Class 0: 3 of 4 right; class 1: 0 of 1 right.
        let m = evaluate(&[0, 0, 0, 0, 1], &[0, 0, 0, 1, 0], 2).unwrap();
        assert!((m.accuracy_micro - 0.6).abs() < 1e-12);
        assert!((m.accuracy_macro - 0.375).abs() < 1e-12);
        assert!((m.per_class_accuracy[0] - 0.75).abs() < 1e-12);
        assert_eq!(m.per_class_accuracy[1], 0.0);
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        let m = evaluate(&[0, 0], &[0, 2], 3).unwrap();
        assert!((m.accuracy_macro - 0.5).abs() < 1e-12);
        assert!(m.per_class_accuracy[1].is_nan());
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(evaluate(&[0, 5], &[0, 1], 3).is_err());
    }
}
