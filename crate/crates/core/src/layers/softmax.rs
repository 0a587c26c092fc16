//! SoftMax output and the cross-entropy training loss.

use crate::error::{Error, Result};
use crate::real::Real;

/// `e^{a_i} / sum_j e^{a_j}`, evaluated after subtracting the max logit.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty logit vector"));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("softmax of NaN logit"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&a| (a - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Returns `-log softmax(logits)[class]` and its gradient
/// `softmax(logits) - onehot(class)`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], class: usize) -> Result<(T, Vec<T>)> {
    if class >= logits.len() {
        return Err(Error::invalid(format!(
            "class index {class} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits)?;
    // log-sum-exp form keeps the loss finite when the probability underflows
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&a| (a - max).exp()).sum::<T>().ln();
    let loss = lse - logits[class];
    let mut grad = probs;
    grad[class] -= T::one();
    Ok((loss, grad))
}
