//! Classification loss shared by teacher training and image synthesis.

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Matrix};

/// Batch-mean cross-entropy of `logits` against hard `labels`, with its
/// gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::input(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::input("cross-entropy of an empty batch"));
    }
    let n = logits.rows() as f64;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::input(format!("label {y} out of range")));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        let g = grad.row_mut(i);
        softmax_in_place(g, 1.0);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((total / n, grad))
}
