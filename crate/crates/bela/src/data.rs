//! Passages, gold annotations, entity records, and the tokenizer.
//!
//! All offsets in files and in `token_char_spans` are unicode character
//! indices (not bytes), half-open.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BelaError, Result};

/// Words are split into subword tokens of at most this many characters.
pub const SUBWORD_MAX_CHARS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPassage {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub token_char_spans: Vec<(usize, usize)>,
    pub word_start_flags: Vec<bool>,
    pub word_end_flags: Vec<bool>,
    pub language_hint: Option<String>,
}

impl TokenizedPassage {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMention {
    pub start: usize,
    pub end: usize,
    pub entity_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPassage {
    pub id: String,
    pub text: String,
    pub mentions: Vec<GoldMention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub titles: BTreeMap<String, String>,
    pub descriptions: BTreeMap<String, String>,
    pub mention_counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub selected_language: String,
}

impl EntityRecord {
    /// Title in the selected language, falling back to any available title.
    pub fn title(&self) -> &str {
        self.titles
            .get(&self.selected_language)
            .or_else(|| self.titles.values().next())
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn description(&self) -> &str {
        self.descriptions
            .get(&self.selected_language)
            .map(String::as_str)
            .unwrap_or("")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whitespace-and-punctuation word segmentation, then each word chopped into
/// subword tokens of at most [`SUBWORD_MAX_CHARS`] characters. Punctuation
/// characters are single-character words.
pub fn tokenize(text: &str) -> TokenizedPassage {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut word_start = Vec::new();
    let mut word_end = Vec::new();

    let mut push_word = |start: usize, end: usize| {
        // [start, end) is one word in char indices; emit its subword chunks
        let mut s = start;
        while s < end {
            let e = (s + SUBWORD_MAX_CHARS).min(end);
            tokens.push(chars[s..e].iter().collect::<String>());
            spans.push((s, e));
            word_start.push(s == start);
            word_end.push(e == end);
            s = e;
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            push_word(start, i);
        } else {
            push_word(i, i + 1);
            i += 1;
        }
    }

    TokenizedPassage {
        id: String::new(),
        text: text.to_string(),
        tokens,
        token_char_spans: spans,
        word_start_flags: word_start,
        word_end_flags: word_end,
        language_hint: None,
    }
}

pub fn tokenize_passage(raw: &RawPassage) -> TokenizedPassage {
    let mut p = tokenize(&raw.text);
    p.id = raw.id.clone();
    p.language_hint = raw.lang.clone();
    p
}

/// Minimal token span (inclusive i..=j) whose character boundaries coincide
/// exactly with [start_char, end_char); `None` if the gold span is misaligned.
pub fn char_span_to_token_span(
    passage: &TokenizedPassage,
    start_char: usize,
    end_char: usize,
) -> Result<Option<(usize, usize)>> {
    let len = passage.char_len();
    if start_char >= end_char || end_char > len {
        return Err(BelaError::Invalid(format!(
            "character span ({start_char}, {end_char}) out of range for text of {len} chars"
        )));
    }
    let i = passage
        .token_char_spans
        .iter()
        .position(|&(s, _)| s == start_char);
    let j = passage
        .token_char_spans
        .iter()
        .position(|&(_, e)| e == end_char);
    match (i, j) {
        (Some(i), Some(j)) if i <= j => {
            // interior tokens must be contiguous (no gaps across words is
            // fine; gaps in text are allowed as long as boundaries align)
            Ok(Some((i, j)))
        }
        _ => Ok(None),
    }
}

/// Character span of the inclusive token span (i, j).
pub fn token_span_to_char_span(passage: &TokenizedPassage, i: usize, j: usize) -> (usize, usize) {
    (passage.token_char_spans[i].0, passage.token_char_spans[j].1)
}

/// Language with the highest mention count among those that have a
/// description; ties broken by lexicographic language code.
pub fn select_description_language(record: &EntityRecord) -> Result<String> {
    if record.descriptions.is_empty() {
        return Err(BelaError::Invalid(format!(
            "entity {} has no descriptions",
            record.entity_id
        )));
    }
    let mut best: Option<(&String, u64)> = None;
    for lang in record.descriptions.keys() {
        let count = record.mention_counts.get(lang).copied().unwrap_or(0);
        match best {
            // BTreeMap iterates languages in lexicographic order, so a
            // strictly-greater test keeps the smallest code on ties.
            Some((_, c)) if count <= c => {}
            _ => best = Some((lang, count)),
        }
    }
    Ok(best.unwrap().0.clone())
}

pub fn read_corpus(path: &Path) -> Result<Vec<RawPassage>> {
    let file = std::fs::File::open(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| BelaError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: RawPassage = serde_json::from_str(&line).map_err(|e| {
            BelaError::format(path.display().to_string(), format!("line {}: {e}", lineno + 1))
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, passages: &[RawPassage]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    for p in passages {
        serde_json::to_writer(&mut file, p)
            .map_err(|e| BelaError::format(path.display().to_string(), e.to_string()))?;
        writeln!(file).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Reads the catalog and fills `selected_language` for each record.
pub fn read_catalog(path: &Path) -> Result<Vec<EntityRecord>> {
    let file = std::fs::File::open(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out: Vec<EntityRecord> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| BelaError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: EntityRecord = serde_json::from_str(&line).map_err(|e| {
            BelaError::format(path.display().to_string(), format!("line {}: {e}", lineno + 1))
        })?;
        if rec.selected_language.is_empty() {
            rec.selected_language = select_description_language(&rec)?;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_catalog(path: &Path, records: &[EntityRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    for r in records {
        serde_json::to_writer(&mut file, r)
            .map_err(|e| BelaError::format(path.display().to_string(), e.to_string()))?;
        writeln!(file).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}
