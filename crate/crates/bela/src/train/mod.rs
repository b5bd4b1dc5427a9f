//! Staged training: in-batch ED, hard-negative ED, then end-to-end with the
//! entity encoder frozen. Plain SGD over hand-derived gradients; every run is
//! a deterministic function of (data, init model, config).

pub mod grad;
pub mod gradcheck;
pub mod losses;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{char_span_to_token_span, tokenize_passage, EntityRecord, RawPassage, TokenizedPassage};
use crate::ed::pool_mention;
use crate::encoder::{context_means, entity_mean_context, mix_context_means, EncoderConfig};
use crate::error::{BelaError, Result};
use crate::index::EntityIndex;
use crate::md::{boundary_scores, detect_mentions, enumerate_valid_spans, span_probability};
use crate::model::{ModelParams, Stage};
use crate::num::{dot, l2_norm, matvec, mean_rows};
use crate::rejection::build_features;

use grad::{ed_forward_backward, md_forward_backward, r_forward_backward, EdSample, ModelGrads};

/// Longest token span enumerated during MD training.
pub const TRAIN_MAX_SPAN_LEN: usize = 256;
/// Detection threshold used to collect rejection-head candidates.
const R_BETA: f64 = 0.5;
/// Span-length cap for rejection-head candidates.
const R_MAX_LEN: usize = 10;
/// Detected (non-gold) candidates per passage fed to the rejection head.
const MAX_R_CANDIDATES: usize = 8;
/// Gradient weight on the MD term of the summed end-to-end loss. The mean
/// BCE over valid spans (hundreds per passage) makes the per-gold gradient
/// two orders of magnitude smaller than the ED and R terms; this rebalances
/// the heads under the single shared learning rate. Reported losses are
/// unweighted.
const MD_LOSS_WEIGHT: f64 = 16.0;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hard_negatives_per_positive: usize,
    pub seed: u64,
    /// Skip the stage-order check and train this stage from whatever the
    /// initial model happens to be.
    pub from_scratch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::EdInBatch,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            hard_negatives_per_positive: 4,
            seed: 0,
            from_scratch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BelaError::Invalid(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(BelaError::Invalid("batch_size must be positive".into()));
        }
        if self.stage == Stage::EdInBatch && self.batch_size < 2 {
            return Err(BelaError::Invalid(
                "ed_inbatch needs batch_size >= 2 (negatives come from the batch)".into(),
            ));
        }
        if matches!(self.stage, Stage::EdHard | Stage::EndToEnd)
            && self.hard_negatives_per_positive == 0
        {
            return Err(BelaError::Invalid(
                "hard_negatives_per_positive must be positive for this stage".into(),
            ));
        }
        if self.stage == Stage::Init {
            return Err(BelaError::Invalid("cannot train stage 'init'".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub md: f64,
    pub ed: f64,
    pub r: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    /// Gold mentions whose character span does not align to token boundaries.
    pub num_unaligned_gold: usize,
    /// Gold mentions referencing entities absent from the catalog.
    pub num_unknown_entity: usize,
}

impl TrainReport {
    /// CSV with one row per epoch: epoch,md_loss,ed_loss,r_loss,total.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,md_loss,ed_loss,r_loss,total\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", i + 1, e.md, e.ed, e.r, e.total));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| BelaError::io(path.display().to_string(), e))
    }
}

/// One tokenized passage with everything the training loops reuse per epoch.
pub struct PreparedPassage {
    pub passage: TokenizedPassage,
    /// Context-averaged hash embeddings, n×d (parameter independent).
    pub ctx: Vec<f64>,
    pub valid_spans: Vec<(usize, usize)>,
    /// Gold token spans (inclusive) for the MD loss.
    pub gold_spans: HashSet<(usize, usize)>,
    /// Gold (start, end, entity row) triples for rejection labels.
    pub gold_triples: HashSet<(usize, usize, usize)>,
    /// Indices into `TrainData::mentions` for this passage.
    pub mention_samples: Vec<usize>,
}

/// One linkable gold mention.
pub struct MentionSample {
    pub passage: usize,
    pub span: (usize, usize),
    /// Row of the gold entity in the catalog order.
    pub entity: usize,
    /// Mean context vector over the span's tokens.
    pub mean_ctx: Vec<f64>,
}

pub struct TrainData {
    pub passages: Vec<PreparedPassage>,
    pub mentions: Vec<MentionSample>,
    pub entity_ids: Vec<String>,
    /// Mean context vector of each entity's text (parameter independent).
    pub entity_ctx: Vec<Vec<f64>>,
    pub num_unaligned_gold: usize,
    pub num_unknown_entity: usize,
}

/// Tokenizes the corpus, precomputes context means, and resolves gold
/// mentions to token spans and catalog rows. Misaligned or unknown-entity
/// mentions are counted and dropped rather than failing the run.
pub fn prepare(
    corpus: &[RawPassage],
    catalog: &[EntityRecord],
    config: &EncoderConfig,
) -> Result<TrainData> {
    let d = config.dim;
    let mut entity_row: HashMap<&str, usize> = HashMap::new();
    for (row, rec) in catalog.iter().enumerate() {
        if entity_row.insert(&rec.entity_id, row).is_some() {
            return Err(BelaError::DuplicateEntity(rec.entity_id.clone()));
        }
    }
    let entity_ctx: Vec<Vec<f64>> = catalog
        .iter()
        .map(|rec| entity_mean_context(rec, config))
        .collect::<Result<_>>()?;

    let mut passages = Vec::with_capacity(corpus.len());
    let mut mentions = Vec::new();
    let mut num_unaligned_gold = 0;
    let mut num_unknown_entity = 0;
    for (pidx, raw) in corpus.iter().enumerate() {
        let passage = tokenize_passage(raw);
        let ctx = context_means(&passage.tokens, config);
        let valid_spans = enumerate_valid_spans(&passage, TRAIN_MAX_SPAN_LEN);
        let mut gold_spans = HashSet::new();
        let mut gold_triples = HashSet::new();
        let mut mention_samples = Vec::new();
        for g in &raw.mentions {
            let span = match char_span_to_token_span(&passage, g.start, g.end)? {
                Some(span) => span,
                None => {
                    num_unaligned_gold += 1;
                    continue;
                }
            };
            let row = match entity_row.get(g.entity_id.as_str()) {
                Some(&row) => row,
                None => {
                    num_unknown_entity += 1;
                    continue;
                }
            };
            let (i, j) = span;
            gold_spans.insert(span);
            gold_triples.insert((i, j, row));
            mention_samples.push(mentions.len());
            mentions.push(MentionSample {
                passage: pidx,
                span,
                entity: row,
                mean_ctx: mean_rows(&ctx[i * d..(j + 1) * d], j - i + 1, d),
            });
        }
        passages.push(PreparedPassage {
            passage,
            ctx,
            valid_spans,
            gold_spans,
            gold_triples,
            mention_samples,
        });
    }
    Ok(TrainData {
        passages,
        mentions,
        entity_ids: catalog.iter().map(|r| r.entity_id.clone()).collect(),
        entity_ctx,
        num_unaligned_gold,
        num_unknown_entity,
    })
}

/// Query vector m for a mention's mean context under the current model.
fn mention_query(model: &ModelParams, mean_ctx: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let wa = matvec(&model.enc_mention.w_mix, mean_ctx, d, d);
    let mut m = matvec(&model.ed.pool_weight, &wa, d, d);
    for (x, &b) in m.iter_mut().zip(&model.ed.pool_bias) {
        *x += b;
    }
    m
}

/// Unit-norm entity vectors for every catalog row under `model.enc_entity`.
fn entity_vectors(model: &ModelParams, entity_ctx: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = model.dim();
    entity_ctx
        .iter()
        .map(|ctx| {
            let u = matvec(&model.enc_entity.w_mix, ctx, d, d);
            let norm = l2_norm(&u).max(1e-12);
            u.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// For each mention, the `per_positive` highest-scoring non-gold entities
/// under the given model, found with an exact index over the full catalog.
pub fn mine_hard_negatives(
    data: &TrainData,
    model: &ModelParams,
    per_positive: usize,
) -> Result<Vec<Vec<usize>>> {
    let d = model.dim();
    let vectors = entity_vectors(model, &data.entity_ctx);
    let mut flat = Vec::with_capacity(vectors.len() * d);
    for v in &vectors {
        flat.extend(v.iter().map(|&x| x as f32));
    }
    let index = EntityIndex::exact_from_vectors(data.entity_ids.clone(), flat, d)?;
    let row_of: HashMap<&str, usize> = data
        .entity_ids
        .iter()
        .enumerate()
        .map(|(row, id)| (id.as_str(), row))
        .collect();
    data.mentions
        .iter()
        .map(|mention| {
            let m = mention_query(model, &mention.mean_ctx);
            let hits = index.search(&m, per_positive + 1)?;
            Ok(hits
                .into_iter()
                .map(|(id, _)| row_of[id.as_str()])
                .filter(|&row| row != mention.entity)
                .take(per_positive)
                .collect())
        })
        .collect()
}

enum NegSource {
    InBatch,
    Mined(Vec<Vec<usize>>),
}

fn run_ed_stage(
    model: &mut ModelParams,
    data: &TrainData,
    source: &NegSource,
    config: &TrainConfig,
    report: &mut TrainReport,
) {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.mentions.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let negatives: Vec<Vec<usize>> = batch
                .iter()
                .map(|&mi| match source {
                    NegSource::Mined(mined) => mined[mi].clone(),
                    NegSource::InBatch => {
                        let own = data.mentions[mi].entity;
                        let mut seen = HashSet::new();
                        batch
                            .iter()
                            .filter(|&&other| other != mi)
                            .map(|&other| data.mentions[other].entity)
                            .filter(|&e| e != own && seen.insert(e))
                            .collect()
                    }
                })
                .collect();
            let usable = negatives.iter().filter(|n| !n.is_empty()).count();
            if usable == 0 {
                continue;
            }
            let weight = 1.0 / usable as f64;
            let mut grads = ModelGrads::zeros(d, model.r.hidden);
            for (&mi, negs) in batch.iter().zip(&negatives) {
                if negs.is_empty() {
                    continue;
                }
                let mention = &data.mentions[mi];
                let sample = EdSample {
                    mean_ctx: &mention.mean_ctx,
                    positive: mention.entity,
                    negatives: negs,
                };
                loss_sum +=
                    ed_forward_backward(&sample, model, &data.entity_ctx, true, weight, &mut grads);
                loss_count += 1;
            }
            grads.apply_sgd(model, config.learning_rate, true);
        }
        let ed = if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 };
        report.epochs.push(EpochLoss { md: 0.0, ed, r: 0.0, total: ed });
    }
}

fn run_end_to_end(
    model: &mut ModelParams,
    data: &TrainData,
    mined: &[Vec<usize>],
    config: &TrainConfig,
    report: &mut TrainReport,
) -> Result<()> {
    let d = model.dim();
    let frozen = entity_vectors(model, &data.entity_ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.passages.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut md_sum = 0.0;
        let mut md_count = 0usize;
        let mut ed_sum = 0.0;
        let mut ed_count = 0usize;
        let mut r_sum = 0.0;
        let mut r_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ModelGrads::zeros(d, model.r.hidden);
            let md_weight = 1.0 / batch.len() as f64;
            let ed_in_batch: usize = batch
                .iter()
                .flat_map(|&pi| &data.passages[pi].mention_samples)
                .filter(|&&mi| !mined[mi].is_empty())
                .count();
            let ed_weight = if ed_in_batch > 0 { 1.0 / ed_in_batch as f64 } else { 0.0 };

            let mut r_batch: Vec<(Vec<f64>, bool)> = Vec::new();
            for &pi in batch {
                let pp = &data.passages[pi];
                md_sum += md_forward_backward(
                    &pp.ctx,
                    &pp.valid_spans,
                    &pp.gold_spans,
                    model,
                    md_weight * MD_LOSS_WEIGHT,
                    &mut grads,
                )?;
                md_count += 1;

                for &mi in &pp.mention_samples {
                    if mined[mi].is_empty() {
                        continue;
                    }
                    let mention = &data.mentions[mi];
                    let sample = EdSample {
                        mean_ctx: &mention.mean_ctx,
                        positive: mention.entity,
                        negatives: &mined[mi],
                    };
                    ed_sum += ed_forward_backward(
                        &sample,
                        model,
                        &data.entity_ctx,
                        false,
                        ed_weight,
                        &mut grads,
                    );
                    ed_count += 1;
                }

                // rejection candidates: top detected spans plus gold spans,
                // each paired with its nearest frozen entity
                if pp.passage.num_tokens() == 0 {
                    continue;
                }
                let reps = mix_context_means(&pp.ctx, &model.enc_mention);
                let scores = boundary_scores(&reps, d, &model.md)?;
                let mut detected = detect_mentions(&scores, &pp.passage, R_BETA, R_MAX_LEN)?;
                detected.sort_by(|a, b| {
                    b.prob
                        .total_cmp(&a.prob)
                        .then(a.start.cmp(&b.start))
                        .then(a.end.cmp(&b.end))
                });
                let mut spans: Vec<(usize, usize)> = detected
                    .iter()
                    .take(MAX_R_CANDIDATES)
                    .map(|s| (s.start, s.end))
                    .collect();
                let chosen: HashSet<(usize, usize)> = spans.iter().copied().collect();
                let mut gold_sorted: Vec<_> = pp.gold_spans.iter().copied().collect();
                gold_sorted.sort_unstable();
                spans.extend(gold_sorted.into_iter().filter(|s| !chosen.contains(s)));
                for (i, j) in spans {
                    let m = pool_mention(&reps, d, i, j, &model.ed);
                    let mut best = 0usize;
                    let mut best_score = f64::NEG_INFINITY;
                    for (row, e) in frozen.iter().enumerate() {
                        let s = dot(&m, e);
                        if s > best_score {
                            best_score = s;
                            best = row;
                        }
                    }
                    let md_prob = span_probability(&scores, i, j)?.prob;
                    let features = build_features(md_prob, best_score, &m, &frozen[best])?;
                    let label = pp.gold_triples.contains(&(i, j, best));
                    r_batch.push((features, label));
                }
            }
            if !r_batch.is_empty() {
                let r_weight = 1.0 / r_batch.len() as f64;
                for (features, label) in &r_batch {
                    r_sum += r_forward_backward(features, *label, model, r_weight, &mut grads);
                    r_count += 1;
                }
            }
            grads.apply_sgd(model, config.learning_rate, false);
        }
        let md = if md_count > 0 { md_sum / md_count as f64 } else { 0.0 };
        let ed = if ed_count > 0 { ed_sum / ed_count as f64 } else { 0.0 };
        let r = if r_count > 0 { r_sum / r_count as f64 } else { 0.0 };
        report.epochs.push(EpochLoss { md, ed, r, total: md + ed + r });
    }
    Ok(())
}

fn check_stage_order(config: &TrainConfig, init: &ModelParams) -> Result<()> {
    if config.from_scratch {
        return Ok(());
    }
    let required = match config.stage {
        Stage::Init | Stage::EdInBatch => return Ok(()),
        Stage::EdHard => Stage::EdInBatch,
        Stage::EndToEnd => Stage::EdHard,
    };
    if init.stage < required {
        return Err(BelaError::Invalid(format!(
            "stage order: {} requires a model trained through {}, but the initial model is at '{}'; \
             train the earlier stages first or set from_scratch",
            config.stage, required, init.stage
        )));
    }
    Ok(())
}

/// Trains one stage, returning the updated model and per-epoch losses.
/// With `epochs == 0` the model is returned unchanged.
pub fn train(
    config: &TrainConfig,
    corpus: &[RawPassage],
    catalog: &[EntityRecord],
    init: &ModelParams,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    check_stage_order(config, init)?;
    let mut model = init.clone();
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((model, report));
    }
    let data = prepare(corpus, catalog, &init.enc_mention.config)?;
    report.num_unaligned_gold = data.num_unaligned_gold;
    report.num_unknown_entity = data.num_unknown_entity;
    if data.mentions.is_empty() {
        return Err(BelaError::Invalid(
            "no trainable gold mentions (all misaligned or unknown)".into(),
        ));
    }
    match config.stage {
        Stage::Init => unreachable!("rejected by validate"),
        Stage::EdInBatch => run_ed_stage(&mut model, &data, &NegSource::InBatch, config, &mut report),
        Stage::EdHard => {
            let mined = mine_hard_negatives(&data, &model, config.hard_negatives_per_positive)?;
            run_ed_stage(&mut model, &data, &NegSource::Mined(mined), config, &mut report);
        }
        Stage::EndToEnd => {
            let mined = mine_hard_negatives(&data, &model, config.hard_negatives_per_positive)?;
            run_end_to_end(&mut model, &data, &mined, config, &mut report)?;
        }
    }
    model.stage = config.stage;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::bce;
    use crate::rejection::rejection_score;
    use grad::md_loss_only;
    use losses::softmax_nll_scores;

    fn small_setup(seed: u64) -> (Vec<EntityRecord>, Vec<RawPassage>, ModelParams, TrainData) {
        let (catalog, corpus) = synth::generate_synthetic_corpus(12, 30, seed).unwrap();
        let cfg = EncoderConfig { dim: 8, ..Default::default() };
        let model = ModelParams::seeded_init(cfg, seed).unwrap();
        let data = prepare(&corpus, &catalog, &cfg).unwrap();
        (catalog, corpus, model, data)
    }

    #[test]
    fn prepare_resolves_all_synthetic_gold() {
        let (_, corpus, _, data) = small_setup(3);
        assert_eq!(data.num_unaligned_gold, 0);
        assert_eq!(data.num_unknown_entity, 0);
        let total_gold: usize = corpus.iter().map(|p| p.mentions.len()).sum();
        assert_eq!(data.mentions.len(), total_gold);
    }

    #[test]
    fn prepare_counts_unknown_and_unaligned() {
        let (catalog, mut corpus, _, _) = small_setup(4);
        corpus[0].mentions[0].entity_id = "E9999".into();
        // offset the second passage's first mention by one char: misaligned
        let g = &mut corpus[1].mentions[0];
        g.start += 1;
        g.end += 1;
        let cfg = EncoderConfig { dim: 8, ..Default::default() };
        let data = prepare(&corpus, &catalog, &cfg).unwrap();
        assert_eq!(data.num_unknown_entity, 1);
        assert_eq!(data.num_unaligned_gold, 1);
    }

    #[test]
    fn duplicate_entity_is_error() {
        let (catalog, corpus, _, _) = small_setup(5);
        let mut dup = catalog.clone();
        dup.push(catalog[0].clone());
        let cfg = EncoderConfig { dim: 8, ..Default::default() };
        assert!(matches!(
            prepare(&corpus, &dup, &cfg),
            Err(BelaError::DuplicateEntity(_))
        ));
    }

    #[test]
    fn mined_negatives_exclude_gold_and_respect_count() {
        let (_, _, model, data) = small_setup(6);
        let mined = mine_hard_negatives(&data, &model, 3).unwrap();
        assert_eq!(mined.len(), data.mentions.len());
        for (mention, negs) in data.mentions.iter().zip(&mined) {
            assert!(negs.len() <= 3);
            assert!(!negs.is_empty());
            assert!(!negs.contains(&mention.entity));
        }
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (catalog, corpus, model, _) = small_setup(7);
        let config = TrainConfig { epochs: 0, ..Default::default() };
        let (out, report) = train(&config, &corpus, &catalog, &model).unwrap();
        assert_eq!(out, model);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn stage_order_enforced() {
        let (catalog, corpus, model, _) = small_setup(8);
        let config = TrainConfig { stage: Stage::EndToEnd, epochs: 1, ..Default::default() };
        let err = train(&config, &corpus, &catalog, &model).unwrap_err();
        assert!(err.to_string().contains("stage order"), "{err}");
        let forced = TrainConfig { from_scratch: true, ..config };
        assert!(train(&forced, &corpus, &catalog, &model).is_ok());
    }

    #[test]
    fn training_is_deterministic() {
        let (catalog, corpus, model, _) = small_setup(9);
        let config = TrainConfig { epochs: 2, learning_rate: 0.05, ..Default::default() };
        let (a, ra) = train(&config, &corpus, &catalog, &model).unwrap();
        let (b, rb) = train(&config, &corpus, &catalog, &model).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs, rb.epochs);
    }

    #[test]
    fn ed_inbatch_loss_decreases() {
        let (catalog, corpus, model, _) = small_setup(10);
        let config = TrainConfig { epochs: 6, learning_rate: 2.0, ..Default::default() };
        let (out, report) = train(&config, &corpus, &catalog, &model).unwrap();
        assert_eq!(out.stage, Stage::EdInBatch);
        let first = report.epochs.first().unwrap().ed;
        let last = report.epochs.last().unwrap().ed;
        assert!(last < first, "ed loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn end_to_end_keeps_entity_encoder_frozen() {
        let (catalog, corpus, mut model, _) = small_setup(11);
        model.stage = Stage::EdHard;
        let before = model.entity_encoder_bytes();
        let config = TrainConfig {
            stage: Stage::EndToEnd,
            epochs: 2,
            learning_rate: 0.05,
            ..Default::default()
        };
        let (out, report) = train(&config, &corpus, &catalog, &model).unwrap();
        assert_eq!(out.entity_encoder_bytes(), before);
        assert_eq!(out.stage, Stage::EndToEnd);
        for e in &report.epochs {
            assert_eq!(e.total, e.md + e.ed + e.r);
        }
        // the mention side did move
        assert_ne!(out.enc_mention.w_mix, model.enc_mention.w_mix);
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            epochs: vec![EpochLoss { md: 0.5, ed: 1.25, r: 0.125, total: 1.875 }],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,md_loss,ed_loss,r_loss,total\n1,0.5,1.25,0.125,1.875\n");
    }

    // gradient checks: analytic gradients from the forward_backward functions
    // against central finite differences on sampled coordinates

    const GRAD_TOL: f64 = 1e-4;

    #[test]
    fn md_gradient_check() {
        let (_, _, model, data) = small_setup(12);
        let pp = data
            .passages
            .iter()
            .find(|p| !p.gold_spans.is_empty() && p.passage.num_tokens() >= 6)
            .unwrap();
        let d = model.dim();
        let mut grads = ModelGrads::zeros(d, model.r.hidden);
        md_forward_backward(&pp.ctx, &pp.valid_spans, &pp.gold_spans, &model, 1.0, &mut grads)
            .unwrap();

        let mut params = Vec::new();
        params.extend(&model.md.w_start);
        params.extend(&model.md.w_end);
        params.extend(&model.md.w_inside);
        params.extend(&model.enc_mention.w_mix);
        let mut analytic = Vec::new();
        analytic.extend(&grads.md_start);
        analytic.extend(&grads.md_end);
        analytic.extend(&grads.md_inside);
        analytic.extend(&grads.w_mix_m);

        let base = model.clone();
        let mut f = |p: &[f64]| {
            let mut m = base.clone();
            m.md.w_start.copy_from_slice(&p[..d]);
            m.md.w_end.copy_from_slice(&p[d..2 * d]);
            m.md.w_inside.copy_from_slice(&p[2 * d..3 * d]);
            m.enc_mention.w_mix.copy_from_slice(&p[3 * d..]);
            md_loss_only(&pp.ctx, &pp.valid_spans, &pp.gold_spans, &m).unwrap()
        };
        let err = gradcheck::gradient_check(&mut f, &params, &analytic, 1e-5, 120, 0);
        assert!(err < GRAD_TOL, "md gradient error {err}");
    }

    #[test]
    fn ed_gradient_check() {
        let (_, _, model, data) = small_setup(13);
        let mention = &data.mentions[0];
        let negatives: Vec<usize> = (0..data.entity_ids.len())
            .filter(|&e| e != mention.entity)
            .take(4)
            .collect();
        let d = model.dim();
        let mut grads = ModelGrads::zeros(d, model.r.hidden);
        let sample = EdSample {
            mean_ctx: &mention.mean_ctx,
            positive: mention.entity,
            negatives: &negatives,
        };
        ed_forward_backward(&sample, &model, &data.entity_ctx, true, 1.0, &mut grads);

        let dd = d * d;
        let mut params = Vec::new();
        params.extend(&model.ed.pool_weight);
        params.extend(&model.ed.pool_bias);
        params.extend(&model.enc_mention.w_mix);
        params.extend(&model.enc_entity.w_mix);
        let mut analytic = Vec::new();
        analytic.extend(&grads.pool_w);
        analytic.extend(&grads.pool_b);
        analytic.extend(&grads.w_mix_m);
        analytic.extend(&grads.w_mix_e);

        let base = model.clone();
        let entity_ctx = data.entity_ctx.clone();
        let mut f = |p: &[f64]| {
            let mut m = base.clone();
            m.ed.pool_weight.copy_from_slice(&p[..dd]);
            m.ed.pool_bias.copy_from_slice(&p[dd..dd + d]);
            m.enc_mention.w_mix.copy_from_slice(&p[dd + d..2 * dd + d]);
            m.enc_entity.w_mix.copy_from_slice(&p[2 * dd + d..]);
            let query = mention_query(&m, &mention.mean_ctx);
            let vectors = entity_vectors(&m, &entity_ctx);
            let mut scores = vec![dot(&query, &vectors[mention.entity])];
            for &n in &negatives {
                scores.push(dot(&query, &vectors[n]));
            }
            softmax_nll_scores(&scores)
        };
        let err = gradcheck::gradient_check(&mut f, &params, &analytic, 1e-5, 150, 1);
        assert!(err < GRAD_TOL, "ed gradient error {err}");
    }

    #[test]
    fn r_gradient_check() {
        let (_, _, model, data) = small_setup(14);
        let d = model.dim();
        let mention = &data.mentions[0];
        let frozen = entity_vectors(&model, &data.entity_ctx);
        let m = mention_query(&model, &mention.mean_ctx);
        let features = build_features(0.8, 0.4, &m, &frozen[mention.entity]).unwrap();
        for label in [true, false] {
            let mut grads = ModelGrads::zeros(d, model.r.hidden);
            r_forward_backward(&features, label, &model, 1.0, &mut grads);

            let mut params = Vec::new();
            params.extend(&model.r.w1);
            params.extend(&model.r.b1);
            params.extend(&model.r.w2);
            params.push(model.r.b2);
            let mut analytic = Vec::new();
            analytic.extend(&grads.r_w1);
            analytic.extend(&grads.r_b1);
            analytic.extend(&grads.r_w2);
            analytic.push(grads.r_b2);

            let base = model.clone();
            let features = features.clone();
            let (h, in_dim) = (model.r.hidden, model.r.in_dim);
            let mut f = |p: &[f64]| {
                let mut m = base.clone();
                m.r.w1.copy_from_slice(&p[..h * in_dim]);
                m.r.b1.copy_from_slice(&p[h * in_dim..h * in_dim + h]);
                m.r.w2.copy_from_slice(&p[h * in_dim + h..h * in_dim + 2 * h]);
                m.r.b2 = p[h * in_dim + 2 * h];
                bce(rejection_score(&features, &m.r), label)
            };
            let err = gradcheck::gradient_check(&mut f, &params, &analytic, 1e-5, 150, 2);
            assert!(err < GRAD_TOL, "r gradient error {err} (label {label})");
        }
    }
}
