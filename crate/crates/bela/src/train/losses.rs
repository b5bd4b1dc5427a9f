//! Training losses. All three heads use either mean binary cross-entropy or
//! softmax negative log-likelihood over (positive, negatives) score lists.

use crate::num::{bce, softmax_nll};
use crate::scalar::Scalar;

/// Mean BCE between span probabilities and gold labels over all valid spans.
/// Probabilities are clamped to [1e-7, 1 − 1e-7] before the log.
pub fn md_loss<F: Scalar>(span_probs: &[F], gold_labels: &[bool]) -> F {
    debug_assert_eq!(span_probs.len(), gold_labels.len());
    if span_probs.is_empty() {
        return F::zero();
    }
    let total: F = span_probs
        .iter()
        .zip(gold_labels)
        .map(|(&p, &y)| bce(p, y))
        .sum();
    total / F::from_usize(span_probs.len())
}

/// −log( exp(s⁺) / (exp(s⁺) + Σ exp(s⁻)) ) with max-subtraction.
pub fn ed_loss<F: Scalar>(positive_score: F, negative_scores: &[F]) -> F {
    debug_assert!(!negative_scores.is_empty());
    let mut scores = Vec::with_capacity(1 + negative_scores.len());
    scores.push(positive_score);
    scores.extend_from_slice(negative_scores);
    softmax_nll(&scores, 0)
}

/// NLL over a score list whose positive sits at index 0.
pub fn softmax_nll_scores<F: Scalar>(scores: &[F]) -> F {
    softmax_nll(scores, 0)
}

/// Mean BCE between rejection scores and pair-match labels; same clamping as
/// the MD loss.
pub fn r_loss<F: Scalar>(scores: &[F], labels: &[bool]) -> F {
    md_loss(scores, labels)
}
