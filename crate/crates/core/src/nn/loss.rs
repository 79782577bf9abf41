//! Softmax, cross-entropy and squared-error losses with their gradients.
//!
//! Batched variants return the mean loss over rows and the gradient of that
//! mean with respect to every logit. [`mse`] averages over elements, so it is
//! the squared L2 norm divided by the element count.

use crate::error::{Error, Result};
use crate::nn::Tensor;

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of a vector or `[batch, n]` matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let cols = logits.cols();
    let data = logits.data().chunks(cols.max(1)).flat_map(softmax_row).collect();
    Tensor::new(logits.shape().to_vec(), data).expect("softmax preserves shape")
}

/// `−log softmax(logits)[target]` for a single logit vector.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    let row = logits.data();
    if target >= row.len() {
        return Err(Error::Index {
            index: target,
            len: row.len(),
        });
    }
    Ok(log_sum_exp(row) - row[target])
}

/// Mean of squared element differences.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Cross-entropy of one row and its gradient `softmax(row) − onehot(target)`.
pub fn cross_entropy_with_grad(row: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= row.len() {
        return Err(Error::Index {
            index: target,
            len: row.len(),
        });
    }
    let loss = log_sum_exp(row) - row[target];
    let mut grad = softmax_row(row);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over the rows of `logits` (`[batch, classes]` flat).
pub fn cross_entropy_batch(logits: &[f64], classes: usize, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let batch = targets.len();
    if logits.len() != batch * classes {
        return Err(Error::dim(format!(
            "{} logits for {batch} targets of {classes} classes",
            logits.len()
        )));
    }
    let scale = 1.0 / batch.max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks(classes).zip(targets) {
        let (l, g) = cross_entropy_with_grad(row, t)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((total * scale, grad))
}

/// Mean squared error between `pred` and `target` with gradient wrt `pred`.
pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::dim(format!("mse of {} and {} values", pred.len(), target.len())));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
