//! Toy deterministic text encoders.
//!
//! The mention encoder maps a token sequence to one d-dimensional row per
//! token: a seeded hash embedding per token, averaged over a +-c context
//! window, then passed through a trainable mixing matrix. The entity encoder
//! is a second instance of the same architecture with its own parameters;
//! entity vectors are the L2-normalized mean over token rows. Both are
//! deterministic functions of (tokens, config, parameters).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{tokenize, EntityRecord, TokenizedPassage};
use crate::error::{BelaError, Result};
use crate::num::{axpy, l2_norm, matvec, mean_rows, scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub context_window: usize,
    pub vocab_hash_buckets: u32,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            context_window: 2,
            vocab_hash_buckets: 1 << 16,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(BelaError::Invalid(format!("encoder dim must be >= 2, got {}", self.dim)));
        }
        if self.vocab_hash_buckets == 0 {
            return Err(BelaError::Invalid("vocab_hash_buckets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// d×d row-major mixing matrix applied to context-averaged embeddings.
    pub w_mix: Vec<f64>,
}

impl EncoderParams {
    /// Identity mixing matrix; the usual starting point before training.
    pub fn identity(config: EncoderConfig) -> Self {
        let d = config.dim;
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        EncoderParams { config, w_mix: w }
    }

    /// Identity plus small seeded noise, rounded through f32 so the params
    /// are exactly representable in the on-disk format.
    pub fn seeded_init(config: EncoderConfig, seed: u64) -> Self {
        let mut p = Self::identity(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in p.w_mix.iter_mut() {
            *w = (*w + 0.01 * (rng.gen::<f64>() * 2.0 - 1.0)) as f32 as f64;
        }
        p
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn token_bucket(token: &str, config: &EncoderConfig) -> u32 {
    (fnv1a64(token.as_bytes()) % config.vocab_hash_buckets as u64) as u32
}

/// Unit-norm embedding of one hash bucket; depends only on (bucket, seed, dim).
pub fn bucket_embedding(bucket: u32, config: &EncoderConfig) -> Vec<f64> {
    let stream = splitmix64(config.seed ^ ((bucket as u64) << 1 | 1));
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut v: Vec<f64> = (0..config.dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let n = l2_norm(&v);
    // uniform cube samples are never all-zero in practice, but guard anyway
    if n == 0.0 {
        v[0] = 1.0;
    } else {
        scale(&mut v, 1.0 / n);
    }
    v
}

/// Context-averaged hash embeddings, one row of length d per token. These do
/// not depend on `w_mix`, so training loops compute them once per passage.
pub fn context_means(tokens: &[String], config: &EncoderConfig) -> Vec<f64> {
    let d = config.dim;
    let n = tokens.len();
    let c = config.context_window;
    let mut cache: HashMap<u32, Vec<f64>> = HashMap::new();
    let embeds: Vec<&Vec<f64>> = {
        // two passes so borrows of the cache stay simple
        for tok in tokens {
            let b = token_bucket(tok, config);
            cache.entry(b).or_insert_with(|| bucket_embedding(b, config));
        }
        tokens
            .iter()
            .map(|tok| &cache[&token_bucket(tok, config)])
            .collect()
    };
    let mut out = vec![0.0; n * d];
    for t in 0..n {
        let lo = t.saturating_sub(c);
        let hi = (t + c).min(n - 1);
        let row = &mut out[t * d..(t + 1) * d];
        for e in embeds.iter().take(hi + 1).skip(lo) {
            axpy(row, 1.0, e);
        }
        scale(row, 1.0 / (hi - lo + 1) as f64);
    }
    out
}

/// Applies the mixing matrix to precomputed context means (n×d → n×d).
pub fn mix_context_means(means: &[f64], params: &EncoderParams) -> Vec<f64> {
    let d = params.config.dim;
    debug_assert_eq!(means.len() % d, 0);
    let n = means.len() / d;
    let mut out = Vec::with_capacity(n * d);
    for t in 0..n {
        out.extend(matvec(&params.w_mix, &means[t * d..(t + 1) * d], d, d));
    }
    out
}

/// Token representations p_t, one row per token. Empty passage → empty matrix.
pub fn encode_tokens(passage: &TokenizedPassage, params: &EncoderParams) -> Vec<f64> {
    mix_context_means(&context_means(&passage.tokens, &params.config), params)
}

/// Text fed to the entity encoder: title and description joined by " : ".
pub fn entity_text(record: &EntityRecord) -> String {
    format!("{} : {}", record.title(), record.description())
}

pub struct EntityEncoding {
    /// Unit-norm entity vector e.
    pub vector: Vec<f64>,
    /// Mean over token rows of the context means (input to w_mix), kept for
    /// backpropagation through the entity side.
    pub mean_context: Vec<f64>,
    /// Norm of the pre-normalization vector u = w_mix · mean_context.
    pub pre_norm: f64,
}

/// Mean over token rows of the entity text's context means. Depends only on
/// the encoder config (not on w_mix), so training precomputes it once.
pub fn entity_mean_context(record: &EntityRecord, config: &EncoderConfig) -> Result<Vec<f64>> {
    if record.title().is_empty() && record.description().is_empty() {
        return Err(BelaError::Invalid(format!(
            "entity {} has empty title and description",
            record.entity_id
        )));
    }
    let passage = tokenize(&entity_text(record));
    let means = context_means(&passage.tokens, config);
    Ok(mean_rows(&means, passage.num_tokens(), config.dim))
}

pub fn encode_entity_full(record: &EntityRecord, params: &EncoderParams) -> Result<EntityEncoding> {
    if record.title().is_empty() && record.description().is_empty() {
        return Err(BelaError::Invalid(format!(
            "entity {} has empty title and description",
            record.entity_id
        )));
    }
    let passage = tokenize(&entity_text(record));
    let d = params.config.dim;
    let means = context_means(&passage.tokens, &params.config);
    let mean_context = mean_rows(&means, passage.num_tokens(), d);
    let u = matvec(&params.w_mix, &mean_context, d, d);
    let norm = l2_norm(&u);
    if norm == 0.0 {
        return Err(BelaError::Invalid(format!(
            "entity {} encodes to the zero vector",
            record.entity_id
        )));
    }
    let mut vector = u;
    scale(&mut vector, 1.0 / norm);
    Ok(EntityEncoding {
        vector,
        mean_context,
        pre_norm: norm,
    })
}

/// Unit-norm entity vector e = enc_e(t(e), d(e)).
pub fn encode_entity(record: &EntityRecord, params: &EncoderParams) -> Result<Vec<f64>> {
    Ok(encode_entity_full(record, params)?.vector)
}
