//! Softmax and the fused softmax + cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerically stable softmax over a slice.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &v| a + v);
    exps.into_iter().map(|v| v / sum).collect()
}

/// Loss `-ln p[true_class]` and its gradient `p - onehot(true_class)` for a
/// single logit vector.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    true_class: usize,
) -> Result<(T, Tensor<T>)> {
    let k = logits.len();
    if logits.shape().len() != 1 || k < 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax_cross_entropy expects a 1-D logit vector of length >= 2, got {:?}",
            logits.shape()
        )));
    }
    if true_class >= k {
        return Err(Error::IndexOutOfRange(format!(
            "class {true_class} out of {k}"
        )));
    }
    let probs = softmax(logits.data());
    let loss = -probs[true_class].ln();
    let mut grad = Tensor::new(vec![k], probs)?;
    grad.data_mut()[true_class] = grad.data()[true_class] - T::one();
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch of logit rows, with the gradient of the
/// mean (each row's `p - onehot` scaled by `1/batch`).
pub fn batch_softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let [n, k] = *logits.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected (batch, classes) logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    let inv_n = T::one() / T::from_f64(n as f64);
    for (row, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::IndexOutOfRange(format!("class {label} out of {k}")));
        }
        let slice = &logits.data()[row * k..(row + 1) * k];
        let probs = softmax(slice);
        total = total + -probs[label].ln();
        let g = &mut grad.data_mut()[row * k..(row + 1) * k];
        for (j, p) in probs.into_iter().enumerate() {
            let delta = if j == label { T::one() } else { T::zero() };
            g[j] = (p - delta) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}
