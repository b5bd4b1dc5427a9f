//! End-to-end inference: window long passages, run the encoder once per
//! window, chain MD → ED → R, merge across windows.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{token_span_to_char_span, tokenize_passage, RawPassage, TokenizedPassage};
use crate::ed::{disambiguate, pool_mention};
use crate::error::{BelaError, Result};
use crate::encoder::{context_means, mix_context_means};
use crate::index::EntityIndex;
use crate::md::{boundary_scores, detect_mentions};
use crate::model::ModelParams;
use crate::rejection::{accept, build_features, rejection_score};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkerConfig {
    pub beta: f64,
    pub gamma: f64,
    pub max_seq_len: usize,
    pub window_overlap: usize,
    pub max_mention_len: usize,
    pub k: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            beta: 0.4,
            gamma: 0.2,
            max_seq_len: 256,
            window_overlap: 128,
            max_mention_len: 10,
            k: 16,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(BelaError::Invalid(format!("beta must be in [0,1), got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(BelaError::Invalid(format!("gamma must be in [0,1], got {}", self.gamma)));
        }
        if self.window_overlap == 0 || self.window_overlap >= self.max_seq_len {
            return Err(BelaError::Invalid(format!(
                "window_overlap must satisfy 0 < overlap < max_seq_len, got {} vs {}",
                self.window_overlap, self.max_seq_len
            )));
        }
        if self.max_mention_len == 0 || self.k == 0 {
            return Err(BelaError::Invalid("max_mention_len and k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub start_token: usize,
    pub end_token: usize,
    pub start_char: usize,
    pub end_char: usize,
    pub entity_id: String,
    pub md_prob: f64,
    pub ed_score: f64,
    pub rejection_score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinkStats {
    /// Number of encoder invocations; the single-pass contract requires this
    /// to equal the number of windows.
    pub encoder_passes: usize,
    pub windows: usize,
}

/// Windows of length <= l_max starting at multiples of stride = l_max −
/// overlap; the last window ends at n. Every token is covered.
pub fn split_windows(n: usize, l_max: usize, overlap: usize) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let stride = l_max - overlap;
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        let e = (s + l_max).min(n);
        out.push((s, e));
        if e == n {
            return out;
        }
        s += stride;
    }
}

/// Among any set of pairwise-overlapping mentions, keeps exactly the one with
/// the highest MD score; ties broken by earlier start, longer span, then
/// lexicographic entity id. Output sorted by start token.
pub fn merge_window_predictions(mut mentions: Vec<LinkedMention>) -> Vec<LinkedMention> {
    mentions.sort_by(|a, b| {
        b.md_prob
            .total_cmp(&a.md_prob)
            .then(a.start_token.cmp(&b.start_token))
            .then((b.end_token - b.start_token).cmp(&(a.end_token - a.start_token)))
            .then(a.entity_id.cmp(&b.entity_id))
    });
    let mut kept: Vec<LinkedMention> = Vec::new();
    for m in mentions {
        let overlaps = kept
            .iter()
            .any(|k| m.start_token <= k.end_token && k.start_token <= m.end_token);
        if !overlaps {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| (m.start_token, m.end_token));
    kept
}

/// All rejection-scored candidates before the gamma gate and before the
/// cross-window merge. Gamma sweeps reuse this so rejection is the only
/// gamma-dependent stage.
pub fn candidates_for_passage(
    passage: &TokenizedPassage,
    model: &ModelParams,
    index: &EntityIndex,
    config: &LinkerConfig,
) -> Result<(Vec<LinkedMention>, LinkStats)> {
    config.validate()?;
    if index.is_empty() {
        return Err(BelaError::EmptyIndex);
    }
    let d = model.dim();
    if index.dim != d {
        return Err(BelaError::DimMismatch {
            expected: d,
            got: index.dim,
        });
    }
    let n = passage.num_tokens();
    let mut stats = LinkStats::default();
    let mut out = Vec::new();
    let windows = split_windows(n, config.max_seq_len, config.window_overlap);
    stats.windows = windows.len();
    let half_overlap = config.window_overlap / 2;
    for &(s, e) in &windows {
        // one encoder pass per window
        let means = context_means(&passage.tokens[s..e], &model.enc_mention.config);
        let reps = mix_context_means(&means, &model.enc_mention);
        stats.encoder_passes += 1;

        let window_passage = TokenizedPassage {
            id: passage.id.clone(),
            text: passage.text.clone(),
            tokens: passage.tokens[s..e].to_vec(),
            token_char_spans: passage.token_char_spans[s..e].to_vec(),
            word_start_flags: passage.word_start_flags[s..e].to_vec(),
            word_end_flags: passage.word_end_flags[s..e].to_vec(),
            language_hint: passage.language_hint.clone(),
        };
        let scores = boundary_scores(&reps, d, &model.md)?;
        let detected = detect_mentions(&scores, &window_passage, config.beta, config.max_mention_len)?;

        // each window owns the spans starting in its core region so a span is
        // emitted by exactly one window
        let core_start = if s == 0 { 0 } else { s + half_overlap };
        let core_end = if e == n { n } else { e - half_overlap };

        for span in detected {
            let gi = s + span.start;
            let gj = s + span.end;
            if gi < core_start || gi >= core_end {
                continue;
            }
            let m = pool_mention(&reps, d, span.start, span.end, &model.ed);
            let dis = disambiguate(&m, index, config.k)?;
            let entity_row = index
                .row_of(&dis.entity_id)
                .expect("search returned unknown id");
            let e_vec: Vec<f64> = index.vector(entity_row).into_iter().map(|x| x as f64).collect();
            let features = build_features(span.prob, dis.ed_score, &m, &e_vec)?;
            let r = rejection_score(&features, &model.r);
            let (start_char, end_char) = token_span_to_char_span(passage, gi, gj);
            out.push(LinkedMention {
                start_token: gi,
                end_token: gj,
                start_char,
                end_char,
                entity_id: dis.entity_id,
                md_prob: span.prob,
                ed_score: dis.ed_score,
                rejection_score: r,
            });
        }
    }
    Ok((out, stats))
}

/// Full linking for one passage: candidates, gamma gate, cross-window merge.
pub fn link_passage(
    passage: &TokenizedPassage,
    model: &ModelParams,
    index: &EntityIndex,
    config: &LinkerConfig,
) -> Result<(Vec<LinkedMention>, LinkStats)> {
    let (candidates, stats) = candidates_for_passage(passage, model, index, config)?;
    let accepted: Vec<LinkedMention> = candidates
        .into_iter()
        .filter(|c| accept(c.rejection_score, config.gamma))
        .collect();
    Ok((merge_window_predictions(accepted), stats))
}

// ---------------------------------------------------------------------------
// Prediction files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredMention {
    pub start: usize,
    pub end: usize,
    pub entity_id: String,
    pub md: f64,
    pub ed: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredPassage {
    pub id: String,
    pub mentions: Vec<PredMention>,
}

impl From<&LinkedMention> for PredMention {
    fn from(m: &LinkedMention) -> Self {
        PredMention {
            start: m.start_char,
            end: m.end_char,
            entity_id: m.entity_id.clone(),
            md: m.md_prob,
            ed: m.ed_score,
            r: m.rejection_score,
        }
    }
}

pub fn write_predictions(path: &Path, preds: &[PredPassage]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    for p in preds {
        serde_json::to_writer(&mut f, p)
            .map_err(|e| BelaError::format(path.display().to_string(), e.to_string()))?;
        writeln!(f).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredPassage>> {
    let f = std::fs::File::open(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| BelaError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            BelaError::format(path.display().to_string(), format!("line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}

/// Links a corpus; one PredPassage per input passage, in order.
pub fn link_corpus(
    corpus: &[RawPassage],
    model: &ModelParams,
    index: &EntityIndex,
    config: &LinkerConfig,
    threads: usize,
) -> Result<Vec<PredPassage>> {
    let run = |raw: &RawPassage| -> Result<PredPassage> {
        let passage = tokenize_passage(raw);
        let (mentions, _) = link_passage(&passage, model, index, config)?;
        Ok(PredPassage {
            id: raw.id.clone(),
            mentions: mentions.iter().map(PredMention::from).collect(),
        })
    };
    if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| BelaError::Invalid(e.to_string()))?;
        pool.install(|| corpus.par_iter().map(run).collect())
    } else {
        corpus.iter().map(run).collect()
    }
}

// ---------------------------------------------------------------------------
// Gamma sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    /// Absent when there are no predictions at this gamma.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub num_predictions: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Gamma of the point with the highest F1 (first on ties).
    pub best_gamma: f64,
}

/// One evaluation per gamma, reusing cached pre-rejection candidates so the
/// encoder runs once per passage for the whole sweep.
pub fn sweep_gamma(
    dev: &[RawPassage],
    model: &ModelParams,
    index: &EntityIndex,
    config: &LinkerConfig,
    grid: &[f64],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(BelaError::Invalid("empty gamma grid".into()));
    }
    let mut cached: Vec<Vec<LinkedMention>> = Vec::with_capacity(dev.len());
    for raw in dev {
        let passage = tokenize_passage(raw);
        let (cands, _) = candidates_for_passage(&passage, model, index, config)?;
        cached.push(cands);
    }
    let mut points = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let mut counts = crate::eval::MatchCounts::default();
        for (raw, cands) in dev.iter().zip(&cached) {
            let accepted: Vec<LinkedMention> = cands
                .iter()
                .filter(|c| accept(c.rejection_score, gamma))
                .cloned()
                .collect();
            let merged = merge_window_predictions(accepted);
            let preds: Vec<PredMention> = merged.iter().map(PredMention::from).collect();
            counts.add(&crate::eval::count_passage(&preds, &raw.mentions));
        }
        let (precision, recall, f1) = counts.prf();
        points.push(SweepPoint {
            gamma,
            precision,
            recall,
            f1,
            num_predictions: counts.num_pred,
        });
    }
    let best_gamma = points
        .iter()
        .max_by(|a, b| a.f1.partial_cmp(&b.f1).unwrap().then(b.gamma.total_cmp(&a.gamma)))
        .unwrap()
        .gamma;
    Ok(SweepResult { points, best_gamma })
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    writeln!(f, "gamma,precision,recall,f1,num_predictions")
        .map_err(|e| BelaError::io(path.display().to_string(), e))?;
    for p in &result.points {
        writeln!(
            f,
            "{:.6},{},{},{:.6},{}",
            p.gamma,
            fmt(p.precision),
            fmt(p.recall),
            p.f1,
            p.num_predictions
        )
        .map_err(|e| BelaError::io(path.display().to_string(), e))?;
    }
    Ok(())
}
