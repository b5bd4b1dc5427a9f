//! Mention detection: start/end/inside span scoring with threshold beta.

use serde::{Deserialize, Serialize};

use crate::data::TokenizedPassage;
use crate::error::{BelaError, Result};
use crate::num::{dot, sigmoid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MdParams<F: Scalar = f64> {
    pub w_start: Vec<F>,
    pub w_end: Vec<F>,
    pub w_inside: Vec<F>,
}

impl<F: Scalar> MdParams<F> {
    pub fn zeros(dim: usize) -> Self {
        MdParams {
            w_start: vec![F::zero(); dim],
            w_end: vec![F::zero(); dim],
            w_inside: vec![F::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.w_start.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScore<F = f64> {
    /// Token index of the first token (inclusive).
    pub start: usize,
    /// Token index of the last token (inclusive).
    pub end: usize,
    pub logit: F,
    pub prob: F,
}

/// Per-token start/end/inside scores.
#[derive(Debug, Clone)]
pub struct BoundaryScores<F: Scalar = f64> {
    pub start: Vec<F>,
    pub end: Vec<F>,
    pub inside: Vec<F>,
}

pub fn boundary_scores<F: Scalar>(
    reps: &[F],
    dim: usize,
    params: &MdParams<F>,
) -> Result<BoundaryScores<F>> {
    if params.dim() != dim {
        return Err(BelaError::DimMismatch {
            expected: dim,
            got: params.dim(),
        });
    }
    debug_assert_eq!(reps.len() % dim, 0);
    let n = reps.len() / dim;
    let mut start = Vec::with_capacity(n);
    let mut end = Vec::with_capacity(n);
    let mut inside = Vec::with_capacity(n);
    for t in 0..n {
        let row = &reps[t * dim..(t + 1) * dim];
        start.push(dot(&params.w_start, row));
        end.push(dot(&params.w_end, row));
        inside.push(dot(&params.w_inside, row));
    }
    Ok(BoundaryScores { start, end, inside })
}

impl<F: Scalar> BoundaryScores<F> {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Sum of inside scores strictly between i and j (empty for spans of
    /// length 1 and 2). Summed directly, left to right, so the rounding is a
    /// function of the span alone and windowed scoring stays bit-identical to
    /// whole-passage scoring.
    pub fn inside_sum(&self, i: usize, j: usize) -> F {
        if j <= i {
            return F::zero();
        }
        self.inside[i + 1..j].iter().fold(F::zero(), |acc, &x| acc + x)
    }
}

/// All (i, j) with i <= j, length <= max_len, i word-initial and j word-final,
/// in lexicographic order.
pub fn enumerate_valid_spans(passage: &TokenizedPassage, max_len: usize) -> Vec<(usize, usize)> {
    let n = passage.num_tokens();
    let mut out = Vec::new();
    for i in 0..n {
        if !passage.word_start_flags[i] {
            continue;
        }
        for j in i..(i + max_len).min(n) {
            if passage.word_end_flags[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// p([i,j]) = sigma(s_start[i] + s_end[j] + sum of inside scores strictly
/// between them).
pub fn span_probability<F: Scalar>(
    scores: &BoundaryScores<F>,
    i: usize,
    j: usize,
) -> Result<SpanScore<F>> {
    if i > j || j >= scores.len() {
        return Err(BelaError::Invalid(format!(
            "invalid span ({i}, {j}) for {} tokens",
            scores.len()
        )));
    }
    let logit = scores.start[i] + scores.end[j] + scores.inside_sum(i, j);
    Ok(SpanScore {
        start: i,
        end: j,
        logit,
        prob: sigmoid(logit),
    })
}

/// All valid spans with probability strictly above beta.
pub fn detect_mentions<F: Scalar>(
    scores: &BoundaryScores<F>,
    passage: &TokenizedPassage,
    beta: F,
    max_len: usize,
) -> Result<Vec<SpanScore<F>>> {
    let mut out = Vec::new();
    for (i, j) in enumerate_valid_spans(passage, max_len) {
        let s = span_probability(scores, i, j)?;
        if s.prob > beta {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;
    use crate::encoder::{encode_tokens, EncoderConfig, EncoderParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_passage(n: usize) -> TokenizedPassage {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        tokenize(&words.join(" "))
    }

    #[test]
    fn zero_weights_zero_scores() {
        let d = 4;
        let reps = vec![0.5f64; 3 * d];
        let params = MdParams::zeros(d);
        let s = boundary_scores(&reps, d, &params).unwrap();
        assert!(s.start.iter().all(|&x| x == 0.0));
        assert!(s.end.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn self_dot_score() {
        let w = vec![0.6f64, 0.8, 0.0];
        let params = MdParams {
            w_start: w.clone(),
            w_end: vec![0.0; 3],
            w_inside: vec![0.0; 3],
        };
        let s = boundary_scores(&w, 3, &params).unwrap();
        assert!((s.start[0] - 1.0).abs() < 1e-12); // ‖w‖² = 1
    }

    #[test]
    fn boundary_scores_match_naive_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 8;
        let n = 12;
        let reps: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let params = MdParams {
            w_start: (0..d).map(|_| rng.gen::<f64>() - 0.5).collect(),
            w_end: (0..d).map(|_| rng.gen::<f64>() - 0.5).collect(),
            w_inside: (0..d).map(|_| rng.gen::<f64>() - 0.5).collect(),
        };
        let s = boundary_scores(&reps, d, &params).unwrap();
        for t in 0..n {
            let row = &reps[t * d..(t + 1) * d];
            let naive: f64 = row.iter().zip(&params.w_start).map(|(a, b)| a * b).sum();
            assert!((s.start[t] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch_is_error() {
        let reps = vec![0.0f64; 8];
        assert!(matches!(
            boundary_scores(&reps, 4, &MdParams::zeros(3)),
            Err(BelaError::DimMismatch { .. })
        ));
    }

    #[test]
    fn valid_spans_single_word_tokens() {
        let p = flat_passage(3);
        assert_eq!(
            enumerate_valid_spans(&p, 2),
            vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]
        );
    }

    #[test]
    fn valid_spans_respect_word_boundaries() {
        let p = tokenize("San Francisco"); // San | Franci sco
        assert_eq!(enumerate_valid_spans(&p, 3), vec![(0, 0), (0, 2), (1, 2)]);
    }

    #[test]
    fn valid_span_count_all_word_tokens() {
        let n = 7;
        let p = flat_passage(n);
        assert_eq!(enumerate_valid_spans(&p, n).len(), n * (n + 1) / 2);
    }

    #[test]
    fn span_probability_formula() {
        let d = 2;
        let n = 3;
        let s = BoundaryScores::<f64> {
            start: vec![0.3, 0.0, 0.0],
            end: vec![0.1, 0.0, 0.0],
            inside: vec![0.0, -5.0, 0.0],
        };
        let _ = (d, n);
        let sc = span_probability(&s, 0, 0).unwrap();
        assert!((sc.logit - 0.4).abs() < 1e-12);
        assert!((sc.prob - 0.59868766).abs() < 1e-6);
        // span (0,2): s_inside[1] = -5, start/end contribute 0.3 + 0.0
        let sc = span_probability(&s, 0, 2).unwrap();
        assert!((sc.logit - (0.3 - 5.0)).abs() < 1e-12);
        // all-zero scores → prob 0.5
        let z = BoundaryScores::<f64> {
            start: vec![0.0; 3],
            end: vec![0.0; 3],
            inside: vec![0.0; 3],
        };
        assert_eq!(span_probability(&z, 1, 2).unwrap().prob, 0.5);
        assert!(span_probability(&z, 2, 1).is_err());
    }

    #[test]
    fn detect_thresholds() {
        let p = flat_passage(4);
        let d = 4;
        let cfg = EncoderConfig { dim: d, ..Default::default() };
        let enc = EncoderParams::identity(cfg);
        let reps = encode_tokens(&p, &enc);
        let params = MdParams::zeros(d);
        let scores = boundary_scores(&reps, d, &params).unwrap();
        let all = detect_mentions(&scores, &p, 0.0, 4).unwrap();
        assert_eq!(all.len(), enumerate_valid_spans(&p, 4).len());
        assert!(detect_mentions(&scores, &p, 0.999, 4).unwrap().is_empty());
    }

    #[test]
    fn detect_matches_brute_force_and_is_monotone_in_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let p = flat_passage(10);
        let reps: Vec<f64> = (0..p.num_tokens() * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let params = MdParams {
            w_start: (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
            w_end: (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
            w_inside: (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        };
        let scores = boundary_scores(&reps, d, &params).unwrap();
        let beta = 0.55;
        let got = detect_mentions(&scores, &p, beta, 5).unwrap();
        let brute: Vec<(usize, usize)> = enumerate_valid_spans(&p, 5)
            .into_iter()
            .filter(|&(i, j)| span_probability(&scores, i, j).unwrap().prob > beta)
            .collect();
        assert_eq!(got.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(), brute);

        // β monotonicity
        let lo = detect_mentions(&scores, &p, 0.4, 5).unwrap();
        let hi = detect_mentions(&scores, &p, 0.7, 5).unwrap();
        for s in &hi {
            assert!(lo.iter().any(|t| (t.start, t.end) == (s.start, s.end)));
        }
    }

    #[test]
    fn nested_sum_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 9;
        let inside: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let s = BoundaryScores {
            start: (0..n).map(|_| rng.gen::<f64>() - 0.5).collect(),
            end: (0..n).map(|_| rng.gen::<f64>() - 0.5).collect(),
            inside,
        };
        for i in 0..n {
            for j in i..n - 1 {
                let a = span_probability(&s, i, j).unwrap().logit;
                let b = span_probability(&s, i, j + 1).unwrap().logit;
                let delta = s.end[j + 1] - s.end[j] + if j > i { s.inside[j] } else { 0.0 };
                assert!((b - a - delta).abs() < 1e-12);
            }
        }
    }
}
