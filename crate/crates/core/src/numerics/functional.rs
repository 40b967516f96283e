use super::{kernels, Scalar};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input is not finite"));
    }
    let mut out = vec![T::zero(); logits.len()];
    kernels::softmax_row(logits, &mut out);
    Ok(out)
}

/// `-ln(probs[target])`, with the probability clamped at [`LOG_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &[T], target: usize) -> Result<T> {
    let p = probs.get(target).ok_or_else(|| {
        Error::invalid(format!(
            "target {target} out of range for {} categories",
            probs.len()
        ))
    })?;
    Ok(-p.max(T::lit(LOG_FLOOR)).ln())
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
