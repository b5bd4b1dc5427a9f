//! Hard-match evaluation: end-to-end P/R/F1, MD recall, ED accuracy, and the
//! under-labeling audit. Micro-averaged within a language, macro-averaged
//! across languages.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::{char_span_to_token_span, tokenize_passage, GoldMention, RawPassage};
use crate::ed::{disambiguate, pool_mention};
use crate::encoder::encode_tokens;
use crate::error::{BelaError, Result};
use crate::index::EntityIndex;
use crate::model::ModelParams;
use crate::pipeline::{split_windows, PredMention, PredPassage};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchCounts {
    pub num_gold: usize,
    pub num_pred: usize,
    pub num_correct: usize,
    /// Gold spans with an exactly matching predicted span, entity ignored.
    pub num_span_match: usize,
}

impl MatchCounts {
    pub fn add(&mut self, other: &MatchCounts) {
        self.num_gold += other.num_gold;
        self.num_pred += other.num_pred;
        self.num_correct += other.num_correct;
        self.num_span_match += other.num_span_match;
    }

    /// (precision, recall, f1); precision absent with no predictions, recall
    /// absent with no gold, f1 = 0 unless both are present and positive.
    pub fn prf(&self) -> (Option<f64>, Option<f64>, f64) {
        let p = (self.num_pred > 0).then(|| self.num_correct as f64 / self.num_pred as f64);
        let r = (self.num_gold > 0).then(|| self.num_correct as f64 / self.num_gold as f64);
        let f1 = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        };
        (p, r, f1)
    }

    pub fn md_recall(&self) -> Option<f64> {
        (self.num_gold > 0).then(|| self.num_span_match as f64 / self.num_gold as f64)
    }
}

/// Hard matching with one-to-one assignment: a prediction is correct iff its
/// (start, end, entity_id) triple equals an unconsumed gold triple.
pub fn count_passage(preds: &[PredMention], gold: &[GoldMention]) -> MatchCounts {
    let mut triples: HashMap<(usize, usize, &str), usize> = HashMap::new();
    let mut spans: HashMap<(usize, usize), usize> = HashMap::new();
    for g in gold {
        *triples.entry((g.start, g.end, g.entity_id.as_str())).or_default() += 1;
        *spans.entry((g.start, g.end)).or_default() += 1;
    }
    let mut counts = MatchCounts {
        num_gold: gold.len(),
        num_pred: preds.len(),
        ..Default::default()
    };
    for p in preds {
        if let Some(c) = triples.get_mut(&(p.start, p.end, p.entity_id.as_str())) {
            if *c > 0 {
                *c -= 1;
                counts.num_correct += 1;
            }
        }
    }
    // span-level matching for MD recall, entity ignored
    for p in preds {
        if let Some(c) = spans.get_mut(&(p.start, p.end)) {
            if *c > 0 {
                *c -= 1;
                counts.num_span_match += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LangMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub md_recall: Option<f64>,
    pub ed_accuracy: Option<f64>,
    pub num_gold: usize,
    pub num_pred: usize,
    pub num_correct: usize,
    pub num_unreachable_gold: usize,
}

impl LangMetrics {
    fn from_counts(counts: &MatchCounts, unreachable: usize) -> Self {
        let (precision, recall, f1) = counts.prf();
        LangMetrics {
            precision,
            recall,
            f1,
            md_recall: counts.md_recall(),
            ed_accuracy: None,
            num_gold: counts.num_gold,
            num_pred: counts.num_pred,
            num_correct: counts.num_correct,
            num_unreachable_gold: unreachable,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub overall: LangMetrics,
    pub per_language: BTreeMap<String, LangMetrics>,
    /// Arithmetic mean of per-language F1 when language tags are present.
    pub macro_f1: Option<f64>,
}

fn unreachable_gold(raw: &RawPassage) -> usize {
    let passage = tokenize_passage(raw);
    raw.mentions
        .iter()
        .filter(|g| {
            !matches!(char_span_to_token_span(&passage, g.start, g.end), Ok(Some(_)))
        })
        .count()
}

/// End-to-end evaluation of a prediction file against gold passages.
/// Passage ids must match one-to-one.
pub fn evaluate(preds: &[PredPassage], gold: &[RawPassage]) -> Result<EvalReport> {
    let gold_by_id: HashMap<&str, &RawPassage> =
        gold.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut missing: Vec<&str> = preds
        .iter()
        .filter(|p| !gold_by_id.contains_key(p.id.as_str()))
        .map(|p| p.id.as_str())
        .collect();
    let pred_ids: std::collections::HashSet<&str> = preds.iter().map(|p| p.id.as_str()).collect();
    missing.extend(gold.iter().filter(|g| !pred_ids.contains(g.id.as_str())).map(|g| g.id.as_str()));
    if !missing.is_empty() {
        return Err(BelaError::Invalid(format!(
            "passage id mismatch between predictions and gold: {}",
            missing.join(", ")
        )));
    }

    let mut overall = MatchCounts::default();
    let mut overall_unreachable = 0;
    let mut per_lang: BTreeMap<String, (MatchCounts, usize)> = BTreeMap::new();
    for p in preds {
        let g = gold_by_id[p.id.as_str()];
        let counts = count_passage(&p.mentions, &g.mentions);
        let unreachable = unreachable_gold(g);
        overall.add(&counts);
        overall_unreachable += unreachable;
        if let Some(lang) = &g.lang {
            let e = per_lang.entry(lang.clone()).or_default();
            e.0.add(&counts);
            e.1 += unreachable;
        }
    }
    let per_language: BTreeMap<String, LangMetrics> = per_lang
        .iter()
        .map(|(l, (c, u))| (l.clone(), LangMetrics::from_counts(c, *u)))
        .collect();
    let macro_f1 = (!per_language.is_empty())
        .then(|| per_language.values().map(|m| m.f1).sum::<f64>() / per_language.len() as f64);
    Ok(EvalReport {
        overall: LangMetrics::from_counts(&overall, overall_unreachable),
        per_language,
        macro_f1,
    })
}

///// ED accuracy under oracle mention detection: for every reachable gold span,
/// pool its mention encoding and check whether the top-1 retrieved entity is
/// the gold one. Returns (accuracy, num_scored, num_unreachable).
pub fn ed_accuracy(
    gold: &[RawPassage],
    model: &ModelParams,
    index: &EntityIndex,
    max_seq_len: usize,
) -> Result<(Option<f64>, usize, usize)> {
    let d = model.dim();
    let mut scored = 0usize;
    let mut correct = 0usize;
    let mut unreachable = 0usize;
    for raw in gold {
        let passage = tokenize_passage(raw);
        let n = passage.num_tokens();
        if raw.mentions.is_empty() {
            continue;
        }
        // encode once; long passages fall back to the first window containing
        // the span
        let reps = if n <= max_seq_len {
            encode_tokens(&passage, &model.enc_mention)
        } else {
            Vec::new()
        };
        for g in &raw.mentions {
            let span = match char_span_to_token_span(&passage, g.start, g.end) {
                Ok(Some(s)) => s,
                _ => {
                    unreachable += 1;
                    continue;
                }
            };
            let m = if n <= max_seq_len {
                pool_mention(&reps, d, span.0, span.1, &model.ed)
            } else {
                let overlap = max_seq_len / 2;
                let (s, _e) = split_windows(n, max_seq_len, overlap)
                    .into_iter()
                    .find(|&(s, e)| span.0 >= s && span.1 < e)
                    .ok_or_else(|| BelaError::Invalid("gold span longer than a window".into()))?;
                let sub = crate::data::TokenizedPassage {
                    tokens: passage.tokens[s..s + max_seq_len.min(n - s)].to_vec(),
                    token_char_spans: passage.token_char_spans[s..s + max_seq_len.min(n - s)].to_vec(),
                    word_start_flags: passage.word_start_flags[s..s + max_seq_len.min(n - s)].to_vec(),
                    word_end_flags: passage.word_end_flags[s..s + max_seq_len.min(n - s)].to_vec(),
                    ..passage.clone()
                };
                let wreps = encode_tokens(&sub, &model.enc_mention);
                pool_mention(&wreps, d, span.0 - s, span.1 - s, &model.ed)
            };
            let dis = disambiguate(&m, index, 1)?;
            scored += 1;
            if dis.entity_id == g.entity_id {
                correct += 1;
            }
        }
    }
    let acc = (scored > 0).then(|| correct as f64 / scored as f64);
    Ok((acc, scored, unreachable))
}

#[derive(Debug, Clone, Serialize)]
pub struct UnmatchedPrediction {
    pub passage_id: String,
    pub mention: PredMention,
}

/// All predictions that count as false positives under hard matching, sorted
/// by descending MD score, with per-entity frequency counts for manual audit.
pub fn underlabeling_report(
    preds: &[PredPassage],
    gold: &[RawPassage],
) -> (Vec<UnmatchedPrediction>, BTreeMap<String, usize>) {
    let gold_by_id: HashMap<&str, &RawPassage> = gold.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = Vec::new();
    for p in preds {
        let gold_mentions: &[GoldMention] =
            gold_by_id.get(p.id.as_str()).map(|g| g.mentions.as_slice()).unwrap_or(&[]);
        let mut triples: HashMap<(usize, usize, &str), usize> = HashMap::new();
        for g in gold_mentions {
            *triples.entry((g.start, g.end, g.entity_id.as_str())).or_default() += 1;
        }
        for m in &p.mentions {
            let matched = triples
                .get_mut(&(m.start, m.end, m.entity_id.as_str()))
                .map(|c| {
                    if *c > 0 {
                        *c -= 1;
                        true
                    } else {
                        false
                    }
                })
                .unwrap_or(false);
            if !matched {
                out.push(UnmatchedPrediction {
                    passage_id: p.id.clone(),
                    mention: m.clone(),
                });
            }
        }
    }
    out.sort_by(|a, b| b.mention.md.total_cmp(&a.mention.md));
    let mut by_entity: BTreeMap<String, usize> = BTreeMap::new();
    for u in &out {
        *by_entity.entry(u.mention.entity_id.clone()).or_default() += 1;
    }
    (out, by_entity)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Human-readable table of an evaluation report.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("lang      P       R       F1      MDrec   gold  pred  corr  unreach\n");
    let mut row = |name: &str, m: &LangMetrics| {
        s.push_str(&format!(
            "{:<8}  {:<6}  {:<6}  {:<6.4}  {:<6}  {:<4}  {:<4}  {:<4}  {}\n",
            name,
            fmt_opt(m.precision),
            fmt_opt(m.recall),
            m.f1,
            fmt_opt(m.md_recall),
            m.num_gold,
            m.num_pred,
            m.num_correct,
            m.num_unreachable_gold
        ));
    };
    for (lang, m) in &report.per_language {
        row(lang, m);
    }
    row("overall", &report.overall);
    if let Some(mf1) = report.macro_f1 {
        s.push_str(&format!("macro-avg F1 across languages: {mf1:.4}\n"));
    }
    s
}
