use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[B, K]` logits, stabilized by subtracting each
/// row's maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = classes(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

fn classes<T: Scalar>(logits: &Tensor<T>) -> Result<usize> {
    match logits.shape() {
        &[_, k] if k >= 2 => Ok(k),
        s => Err(Error::shape(format!("logits must be [B, K>=2], got {s:?}"))),
    }
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let k = classes(logits)?;
    let batch = logits.shape()[0];
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside 0..{k}")));
    }
    let probs = softmax(logits)?;
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        // -log softmax = logsumexp(row - max) - (row[label] - max)
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln();
        total = total + lse - (row[label] - max);
    }
    let b = T::from_usize(batch).unwrap();
    let mut grad = probs;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v / b;
        }
    }
    Ok((total / b, grad))
}
