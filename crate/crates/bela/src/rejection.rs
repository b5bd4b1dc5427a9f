//! Rejection head: accepts or rejects (span, entity) pairs via a one-hidden-
//! layer network over holistic features, gated by threshold gamma.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BelaError, Result};
use crate::num::{dot, matvec, sigmoid};
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: usize = 128;

/// Feature length for encoder dimension d: [md, ed, m, e, m − e, m ⊙ e].
pub fn feature_len(dim: usize) -> usize {
    2 + 4 * dim
}

#[derive(Debug, Clone, PartialEq)]
pub struct RParams<F: Scalar = f64> {
    /// h × (2+4d) row-major.
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: F,
    pub hidden: usize,
    pub in_dim: usize,
}

impl<F: Scalar> RParams<F> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let in_dim = feature_len(dim);
        RParams {
            w1: vec![F::zero(); hidden * in_dim],
            b1: vec![F::zero(); hidden],
            w2: vec![F::zero(); hidden],
            b2: F::zero(),
            hidden,
            in_dim,
        }
    }

    pub fn seeded_init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (p.in_dim as f64).sqrt();
        for w in p.w1.iter_mut() {
            *w = F::from_f64(((rng.gen::<f64>() * 2.0 - 1.0) * s) as f32 as f64);
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for w in p.w2.iter_mut() {
            *w = F::from_f64(((rng.gen::<f64>() * 2.0 - 1.0) * s2) as f32 as f64);
        }
        p
    }
}

/// Fixed layout: [p([i,j]), s(e*,[i,j]), m, e*, m − e*, m ⊙ e*].
pub fn build_features<F: Scalar>(md_prob: F, ed_score: F, m: &[F], e: &[F]) -> Result<Vec<F>> {
    if m.len() != e.len() {
        return Err(BelaError::DimMismatch {
            expected: m.len(),
            got: e.len(),
        });
    }
    let mut f = Vec::with_capacity(feature_len(m.len()));
    f.push(md_prob);
    f.push(ed_score);
    f.extend_from_slice(m);
    f.extend_from_slice(e);
    f.extend(m.iter().zip(e).map(|(&a, &b)| a - b));
    f.extend(m.iter().zip(e).map(|(&a, &b)| a * b));
    Ok(f)
}

/// sigma(w2 · relu(W1 f + b1) + b2), always in (0, 1).
pub fn rejection_score<F: Scalar>(features: &[F], params: &RParams<F>) -> F {
    debug_assert_eq!(features.len(), params.in_dim);
    let mut h = matvec(&params.w1, features, params.hidden, params.in_dim);
    for (x, &b) in h.iter_mut().zip(&params.b1) {
        *x = (*x + b).max(F::zero());
    }
    sigmoid(dot(&params.w2, &h) + params.b2)
}

/// Strict threshold, per the acceptance rule score > gamma.
pub fn accept<F: Scalar>(score: F, gamma: F) -> bool {
    score > gamma
}
