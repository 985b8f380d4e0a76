use thiserror::Error;

use super::Scalar;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("row {row} has no valid token")]
    AllMasked { row: usize },
    #[error("target {target} at row {row} is masked as invalid")]
    TargetMasked { row: usize, target: TokenId },
    #[error("non-finite loss at row {row}")]
    NonFinite { row: usize },
}

/// Softmax over the entries where `mask` is true. Masked entries get
/// probability exactly zero. Computed in `f64`.
pub fn masked_distribution<T: Scalar>(logits: &[T], mask: &[bool]) -> Result<Vec<f64>, LossError> {
    assert_eq!(logits.len(), mask.len(), "mask length");
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| Scalar::to_f64(*l))
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(LossError::AllMasked { row: 0 });
    }
    let mut probs: Vec<f64> =
        logits.iter().zip(mask).map(|(l, &m)| if m { (Scalar::to_f64(*l) - max).exp() } else { 0.0 }).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    /// Mean negative log-likelihood over counted rows; zero if none.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits.
    pub dlogits: Vec<T>,
    /// Rows that contributed to the loss.
    pub counted: usize,
    /// Largest probability mass assigned to masked tokens on any counted row.
    pub invalid_mass: f64,
}

/// Masked cross-entropy over `targets.len()` rows of `vocab_size` logits.
/// Rows whose target is `None` are excluded from the mean.
pub fn masked_cross_entropy<T: Scalar>(
    logits: &[T],
    vocab_size: usize,
    targets: &[Option<TokenId>],
    masks: &[&[bool]],
) -> Result<LossOutput<T>, LossError> {
    assert_eq!(logits.len(), targets.len() * vocab_size, "logits shape");
    assert_eq!(masks.len(), targets.len(), "one mask per row");
    let counted = targets.iter().filter(|t| t.is_some()).count();
    let mut dlogits = vec![T::zero(); logits.len()];
    let mut total = 0.0;
    let mut invalid_mass: f64 = 0.0;
    let scale = if counted > 0 { 1.0 / counted as f64 } else { 0.0 };
    for (row, (&target, mask)) in targets.iter().zip(masks).enumerate() {
        let Some(target) = target else { continue };
        let range = row * vocab_size..(row + 1) * vocab_size;
        let probs = masked_distribution(&logits[range.clone()], mask).map_err(|_| LossError::AllMasked { row })?;
        if !mask[target as usize] {
            return Err(LossError::TargetMasked { row, target });
        }
        let p = probs[target as usize];
        let nll = -p.ln();
        if !nll.is_finite() {
            return Err(LossError::NonFinite { row });
        }
        total += nll;
        invalid_mass = invalid_mass.max(probs.iter().zip(mask.iter()).filter(|(_, &m)| !m).map(|(p, _)| p).sum());
        let grad = &mut dlogits[range];
        for (j, g) in grad.iter_mut().enumerate() {
            let onehot = if j == target as usize { 1.0 } else { 0.0 };
            *g = T::from_f64((probs[j] - onehot) * scale);
        }
    }
    Ok(LossOutput { loss: total * scale, dlogits, counted, invalid_mass })
}
