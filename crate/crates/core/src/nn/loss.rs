use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Row-wise softmax with the usual max-subtraction guard.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient with respect to the logits, (p - onehot) / batch.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label(format!(
            "label {} out of range for {} classes",
            bad, c
        )));
    }
    let probs = softmax(logits);
    let b = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = probs;
    for (i, &label) in labels.iter().enumerate() {
        let p = grad.get(i, label);
        loss -= p.max(1e-300).ln();
        grad.set(i, label, p - 1.0);
    }
    loss /= b;
    for v in grad.data_mut() {
        *v /= b;
    }
    Ok((loss, grad))
}

/// Argmax prediction per row, lowest index wins ties.
pub fn predict_labels(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
