//! Entity disambiguation: mention pooling and kNN resolution.

use crate::error::{BelaError, Result};
use crate::index::EntityIndex;
use crate::md::SpanScore;
use crate::num::{dot, matvec, mean_rows};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EdParams<F: Scalar = f64> {
    /// d×d row-major pooling weight.
    pub pool_weight: Vec<F>,
    pub pool_bias: Vec<F>,
}

impl<F: Scalar> EdParams<F> {
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![F::zero(); dim * dim];
        for i in 0..dim {
            w[i * dim + i] = F::one();
        }
        EdParams {
            pool_weight: w,
            pool_bias: vec![F::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.pool_bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct MentionCandidate<F: Scalar = f64> {
    pub md: SpanScore<F>,
    /// Pooled mention encoding m.
    pub encoding: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disambiguation {
    pub entity_id: String,
    pub ed_score: f64,
    /// Lower-ranked (entity, score) pairs from the same query, best first.
    pub runner_ups: Vec<(String, f64)>,
}

/// m = pool_weight · mean(p_i..p_j) + pool_bias, spans inclusive.
pub fn pool_mention<F: Scalar>(
    reps: &[F],
    dim: usize,
    i: usize,
    j: usize,
    params: &EdParams<F>,
) -> Vec<F> {
    debug_assert!(i <= j && (j + 1) * dim <= reps.len());
    let mean = mean_rows(&reps[i * dim..(j + 1) * dim], j - i + 1, dim);
    let mut m = matvec(&params.pool_weight, &mean, dim, dim);
    for (x, &b) in m.iter_mut().zip(&params.pool_bias) {
        *x = *x + b;
    }
    m
}

/// ED score s(e, [i,j]) = e·m.
pub fn ed_score<F: Scalar>(m: &[F], e: &[F]) -> Result<F> {
    if m.len() != e.len() {
        return Err(BelaError::DimMismatch {
            expected: m.len(),
            got: e.len(),
        });
    }
    Ok(dot(m, e))
}

/// Top-k search with the mention encoding as query; rank 1 is e*.
pub fn disambiguate(encoding: &[f64], index: &EntityIndex, k: usize) -> Result<Disambiguation> {
    let results = index.search(encoding, k)?;
    let mut iter = results.into_iter();
    let (entity_id, ed_score) = iter.next().ok_or(BelaError::EmptyIndex)?;
    Ok(Disambiguation {
        entity_id,
        ed_score,
        runner_ups: iter.collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::EntityIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_identity_single_token() {
        let d = 3;
        let reps = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let params = EdParams::identity(d);
        assert_eq!(pool_mention(&reps, d, 1, 1, &params), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn pool_mean_of_equal_tokens() {
        let d = 2;
        let reps = vec![0.5, -1.0, 0.5, -1.0];
        let params = EdParams::identity(d);
        assert_eq!(pool_mention(&reps, d, 0, 1, &params), vec![0.5, -1.0]);
    }

    #[test]
    fn pool_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let n = 6;
        let reps: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let params = EdParams {
            pool_weight: (0..d * d).map(|_| rng.gen::<f64>() - 0.5).collect(),
            pool_bias: (0..d).map(|_| rng.gen::<f64>() - 0.5).collect(),
        };
        let (i, j) = (1, 4);
        let m = pool_mention(&reps, d, i, j, &params);
        // naive recomputation
        for r in 0..d {
            let mut mean = vec![0.0; d];
            for t in i..=j {
                for c in 0..d {
                    mean[c] += reps[t * d + c] / (j - i + 1) as f64;
                }
            }
            let mut v = params.pool_bias[r];
            for c in 0..d {
                v += params.pool_weight[r * d + c] * mean[c];
            }
            assert!((m[r] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ed_score_cases() {
        assert_eq!(ed_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ed_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ed_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(ed_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn disambiguate_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 8;
        let n = 50;
        let ids: Vec<String> = (0..n).map(|i| format!("e{i:03}")).collect();
        let vecs: Vec<f32> = (0..n * d).map(|_| rng.gen::<f32>() - 0.5).collect();
        let index = EntityIndex::exact_from_vectors(ids.clone(), vecs.clone(), d).unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let got = disambiguate(&q, &index, 5).unwrap();
        let mut brute: Vec<(String, f64)> = (0..n)
            .map(|r| {
                let s: f64 = (0..d).map(|c| vecs[r * d + c] as f64 * q[c]).sum();
                (ids[r].clone(), s)
            })
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got.entity_id, brute[0].0);
        assert!((got.ed_score - brute[0].1).abs() < 1e-9);
        // scaling the query leaves the argmax unchanged
        let scaled: Vec<f64> = q.iter().map(|x| x * 3.5).collect();
        assert_eq!(disambiguate(&scaled, &index, 1).unwrap().entity_id, got.entity_id);
    }

    #[test]
    fn k_clipped_to_index_size() {
        let index = EntityIndex::exact_from_vectors(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
            2,
        )
        .unwrap();
        let d = disambiguate(&[1.0, 0.0], &index, 5).unwrap();
        assert_eq!(1 + d.runner_ups.len(), 3);
    }

    #[test]
    fn single_entity_always_wins() {
        let index = EntityIndex::exact_from_vectors(vec!["only".into()], vec![0.1, 0.2], 2).unwrap();
        assert_eq!(disambiguate(&[-5.0, 3.0], &index, 1).unwrap().entity_id, "only");
    }
}
