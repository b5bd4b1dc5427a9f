//! Central finite-difference verification of analytic gradients.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compares `analytic` against central finite differences of `loss_fn` on a
/// random sample of at least `sample` coordinates (all of them when the
/// parameter vector is smaller). Returns the max relative error
/// |g_a − g_fd| / max(1e-8, |g_a| + |g_fd|).
pub fn gradient_check(
    loss_fn: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    sample: usize,
    seed: u64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    assert!(eps > 0.0);
    let mut coords: Vec<usize> = (0..params.len()).collect();
    if coords.len() > sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(sample);
    }
    let mut work = params.to_vec();
    let mut max_err: f64 = 0.0;
    for &c in &coords {
        let orig = work[c];
        work[c] = orig + eps;
        let up = loss_fn(&work);
        work[c] = orig - eps;
        let down = loss_fn(&work);
        work[c] = orig;
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[c] - fd).abs() / (analytic[c].abs() + fd.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    max_err
}
