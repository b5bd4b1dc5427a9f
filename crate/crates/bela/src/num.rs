//! Small dense-vector kernels shared by all heads.

use crate::scalar::Scalar;

/// Probabilities fed to a log are clamped to [PROB_CLAMP, 1 - PROB_CLAMP].
pub const PROB_CLAMP: f64 = 1e-7;

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

pub fn scale<F: Scalar>(a: &mut [F], s: F) {
    for x in a.iter_mut() {
        *x = *x * s;
    }
}

/// a += s * b
pub fn axpy<F: Scalar>(a: &mut [F], s: F, b: &[F]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + s * y;
    }
}

/// y = W x with W row-major (rows × cols).
pub fn matvec<F: Scalar>(w: &[F], x: &[F], rows: usize, cols: usize) -> Vec<F> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

/// y = Wᵀ x with W row-major (rows × cols); x has `rows` entries.
pub fn matvec_t<F: Scalar>(w: &[F], x: &[F], rows: usize, cols: usize) -> Vec<F> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    let mut y = vec![F::zero(); cols];
    for r in 0..rows {
        axpy(&mut y, x[r], &w[r * cols..(r + 1) * cols]);
    }
    y
}

/// W += s * u vᵀ (rank-one update, W row-major len(u) × len(v)).
pub fn outer_add<F: Scalar>(w: &mut [F], s: F, u: &[F], v: &[F]) {
    debug_assert_eq!(w.len(), u.len() * v.len());
    for (r, &ur) in u.iter().enumerate() {
        axpy(&mut w[r * v.len()..(r + 1) * v.len()], s * ur, v);
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn clamp_prob<F: Scalar>(p: F) -> F {
    let lo = F::from_f64(PROB_CLAMP);
    let hi = F::one() - lo;
    p.max(lo).min(hi)
}

/// Binary cross-entropy of one (probability, label) pair, clamped.
pub fn bce<F: Scalar>(p: F, label: bool) -> F {
    let p = clamp_prob(p);
    if label {
        -p.ln()
    } else {
        -(F::one() - p).ln()
    }
}

/// −log softmax(scores)[positive], computed with max-subtraction.
pub fn softmax_nll<F: Scalar>(scores: &[F], positive: usize) -> F {
    debug_assert!(positive < scores.len());
    let m = scores.iter().cloned().fold(F::neg_infinity(), F::max);
    let lse = scores.iter().map(|&s| (s - m).exp()).sum::<F>().ln() + m;
    lse - scores[positive]
}

/// softmax(scores) with max-subtraction.
pub fn softmax<F: Scalar>(scores: &[F]) -> Vec<F> {
    let m = scores.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: F = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn mean_rows<F: Scalar>(rows: &[F], n: usize, d: usize) -> Vec<F> {
    debug_assert_eq!(rows.len(), n * d);
    let mut out = vec![F::zero(); d];
    for r in 0..n {
        axpy(&mut out, F::one(), &rows[r * d..(r + 1) * d]);
    }
    let inv = F::one() / F::from_usize(n.max(1));
    scale(&mut out, inv);
    out
}
