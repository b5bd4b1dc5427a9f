//! Hand-derived gradients for the three losses, accumulated into a single
//! gradient buffer. Every function computes the exact gradient of the loss it
//! returns, which the finite-difference checks verify.

use std::collections::HashSet;

use crate::encoder::mix_context_means;
use crate::error::Result;
use crate::md::{boundary_scores, span_probability};
use crate::model::ModelParams;
use crate::num::{axpy, bce, dot, l2_norm, matvec, matvec_t, outer_add, sigmoid, softmax};
use crate::train::losses::{md_loss, softmax_nll_scores};

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub w_mix_m: Vec<f64>,
    pub w_mix_e: Vec<f64>,
    pub md_start: Vec<f64>,
    pub md_end: Vec<f64>,
    pub md_inside: Vec<f64>,
    pub pool_w: Vec<f64>,
    pub pool_b: Vec<f64>,
    pub r_w1: Vec<f64>,
    pub r_b1: Vec<f64>,
    pub r_w2: Vec<f64>,
    pub r_b2: f64,
}

impl ModelGrads {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let in_dim = 2 + 4 * dim;
        ModelGrads {
            w_mix_m: vec![0.0; dim * dim],
            w_mix_e: vec![0.0; dim * dim],
            md_start: vec![0.0; dim],
            md_end: vec![0.0; dim],
            md_inside: vec![0.0; dim],
            pool_w: vec![0.0; dim * dim],
            pool_b: vec![0.0; dim],
            r_w1: vec![0.0; hidden * in_dim],
            r_b1: vec![0.0; hidden],
            r_w2: vec![0.0; hidden],
            r_b2: 0.0,
        }
    }

    /// One SGD step. The entity encoder is only updated when `train_entity`
    /// is set; after the step every parameter is rounded through f32 so it
    /// stays exactly representable in the on-disk format.
    pub fn apply_sgd(&self, model: &mut ModelParams, lr: f64, train_entity: bool) {
        fn step(p: &mut [f64], g: &[f64], lr: f64) {
            for (x, &gx) in p.iter_mut().zip(g) {
                *x -= lr * gx;
            }
        }
        step(&mut model.enc_mention.w_mix, &self.w_mix_m, lr);
        if train_entity {
            step(&mut model.enc_entity.w_mix, &self.w_mix_e, lr);
        }
        step(&mut model.md.w_start, &self.md_start, lr);
        step(&mut model.md.w_end, &self.md_end, lr);
        step(&mut model.md.w_inside, &self.md_inside, lr);
        step(&mut model.ed.pool_weight, &self.pool_w, lr);
        step(&mut model.ed.pool_bias, &self.pool_b, lr);
        step(&mut model.r.w1, &self.r_w1, lr);
        step(&mut model.r.b1, &self.r_b1, lr);
        step(&mut model.r.w2, &self.r_w2, lr);
        model.r.b2 -= lr * self.r_b2;
        model.quantize_to_f32();
    }
}

/// Derivative of the BCE with respect to the pre-sigmoid logit. The clamp in
/// the loss value makes the true gradient zero for |logit| > ~16; the
/// unclamped form p − y is used instead so saturated spans keep a restoring
/// gradient (identical to the clamped gradient everywhere else).
fn bce_logit_grad(prob: f64, label: bool) -> f64 {
    prob - if label { 1.0 } else { 0.0 }
}

/// MD loss (mean BCE over the passage's valid spans) and its gradient with
/// respect to the MD weight vectors and the mention mixing matrix.
///
/// `ctx` holds the context-averaged hash embeddings (n×d), which do not
/// depend on any trainable parameter. Per-span logit gradients are folded
/// into per-token coefficients so the work stays linear in tokens plus spans.
pub fn md_forward_backward(
    ctx: &[f64],
    valid_spans: &[(usize, usize)],
    gold_spans: &HashSet<(usize, usize)>,
    model: &ModelParams,
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<f64> {
    let d = model.dim();
    let n = ctx.len() / d;
    if valid_spans.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let reps = mix_context_means(ctx, &model.enc_mention);
    let scores = boundary_scores(&reps, d, &model.md)?;

    let span_count = valid_spans.len() as f64;
    let mut loss = 0.0;
    let mut alpha_start = vec![0.0; n];
    let mut alpha_end = vec![0.0; n];
    let mut inside_diff = vec![0.0; n + 1];
    for &(i, j) in valid_spans {
        let s = span_probability(&scores, i, j)?;
        let y = gold_spans.contains(&(i, j));
        loss += bce(s.prob, y);
        let gl = bce_logit_grad(s.prob, y) * weight / span_count;
        alpha_start[i] += gl;
        alpha_end[j] += gl;
        if j > i + 1 {
            inside_diff[i + 1] += gl;
            inside_diff[j] -= gl;
        }
    }

    let mut acc = 0.0;
    let mut sum_start = vec![0.0; d];
    let mut sum_end = vec![0.0; d];
    let mut sum_inside = vec![0.0; d];
    for t in 0..n {
        acc += inside_diff[t];
        let p_row = &reps[t * d..(t + 1) * d];
        let a_row = &ctx[t * d..(t + 1) * d];
        axpy(&mut grads.md_start, alpha_start[t], p_row);
        axpy(&mut grads.md_end, alpha_end[t], p_row);
        axpy(&mut grads.md_inside, acc, p_row);
        axpy(&mut sum_start, alpha_start[t], a_row);
        axpy(&mut sum_end, alpha_end[t], a_row);
        axpy(&mut sum_inside, acc, a_row);
    }
    outer_add(&mut grads.w_mix_m, 1.0, &model.md.w_start, &sum_start);
    outer_add(&mut grads.w_mix_m, 1.0, &model.md.w_end, &sum_end);
    outer_add(&mut grads.w_mix_m, 1.0, &model.md.w_inside, &sum_inside);

    Ok(loss / span_count)
}

/// One ED training sample: the mention's mean context vector, the positive
/// entity, and its negatives, all as indices into `entity_ctx`.
pub struct EdSample<'a> {
    pub mean_ctx: &'a [f64],
    pub positive: usize,
    pub negatives: &'a [usize],
}

/// Softmax NLL over (positive, negatives) and its gradient with respect to
/// the pooling layer, the mention mixing matrix, and (when `train_entity`)
/// the entity mixing matrix. Entity vectors are recomputed from their fixed
/// mean-context vectors so gradients flow through the L2 normalization.
pub fn ed_forward_backward(
    sample: &EdSample,
    model: &ModelParams,
    entity_ctx: &[Vec<f64>],
    train_entity: bool,
    weight: f64,
    grads: &mut ModelGrads,
) -> f64 {
    let d = model.dim();
    let wa = matvec(&model.enc_mention.w_mix, sample.mean_ctx, d, d);
    let mut m = matvec(&model.ed.pool_weight, &wa, d, d);
    for (x, &b) in m.iter_mut().zip(&model.ed.pool_bias) {
        *x += b;
    }

    let ents: Vec<usize> = std::iter::once(sample.positive)
        .chain(sample.negatives.iter().copied())
        .collect();
    let mut vectors = Vec::with_capacity(ents.len());
    let mut norms = Vec::with_capacity(ents.len());
    let mut scores = Vec::with_capacity(ents.len());
    for &k in &ents {
        let u = matvec(&model.enc_entity.w_mix, &entity_ctx[k], d, d);
        let norm = l2_norm(&u).max(1e-12);
        let e: Vec<f64> = u.iter().map(|x| x / norm).collect();
        scores.push(dot(&m, &e));
        vectors.push(e);
        norms.push(norm);
    }
    let loss = softmax_nll_scores(&scores);
    let q = softmax(&scores);

    let mut delta_m = vec![0.0; d];
    for (k, e) in vectors.iter().enumerate() {
        let g = (q[k] - if k == 0 { 1.0 } else { 0.0 }) * weight;
        axpy(&mut delta_m, g, e);
        if train_entity {
            // delta_u = (delta_e − (delta_e·e) e) / ‖u‖ with delta_e = g·m
            let proj = g * dot(&m, e);
            let mut delta_u: Vec<f64> = m.iter().map(|x| g * x).collect();
            axpy(&mut delta_u, -proj, e);
            for x in delta_u.iter_mut() {
                *x /= norms[k];
            }
            outer_add(&mut grads.w_mix_e, 1.0, &delta_u, &entity_ctx[ents[k]]);
        }
    }

    outer_add(&mut grads.pool_w, 1.0, &delta_m, &wa);
    axpy(&mut grads.pool_b, 1.0, &delta_m);
    let ptd = matvec_t(&model.ed.pool_weight, &delta_m, d, d);
    outer_add(&mut grads.w_mix_m, 1.0, &ptd, sample.mean_ctx);

    loss
}

/// Rejection BCE for one (features, label) pair and its gradient with
/// respect to the rejection-head parameters. Features are treated as fixed
/// inputs; upstream heads receive no gradient from this loss.
pub fn r_forward_backward(
    features: &[f64],
    label: bool,
    model: &ModelParams,
    weight: f64,
    grads: &mut ModelGrads,
) -> f64 {
    let r = &model.r;
    let mut z = matvec(&r.w1, features, r.hidden, r.in_dim);
    for (x, &b) in z.iter_mut().zip(&r.b1) {
        *x += b;
    }
    let h: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
    let p = sigmoid(dot(&r.w2, &h) + r.b2);
    let loss = bce(p, label);

    let go = bce_logit_grad(p, label) * weight;
    axpy(&mut grads.r_w2, go, &h);
    grads.r_b2 += go;
    let delta_z: Vec<f64> = r
        .w2
        .iter()
        .zip(&z)
        .map(|(&w, &zv)| if zv > 0.0 { go * w } else { 0.0 })
        .collect();
    outer_add(&mut grads.r_w1, 1.0, &delta_z, features);
    axpy(&mut grads.r_b1, 1.0, &delta_z);

    loss
}

/// Loss-only MD evaluation (used by finite-difference checks).
pub fn md_loss_only(
    ctx: &[f64],
    valid_spans: &[(usize, usize)],
    gold_spans: &HashSet<(usize, usize)>,
    model: &ModelParams,
) -> Result<f64> {
    let d = model.dim();
    let reps = mix_context_means(ctx, &model.enc_mention);
    let scores = boundary_scores(&reps, d, &model.md)?;
    let mut probs = Vec::with_capacity(valid_spans.len());
    let mut labels = Vec::with_capacity(valid_spans.len());
    for &(i, j) in valid_spans {
        probs.push(span_probability(&scores, i, j)?.prob);
        labels.push(gold_spans.contains(&(i, j)));
    }
    Ok(md_loss(&probs, &labels))
}
