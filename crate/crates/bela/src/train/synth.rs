//! Deterministic synthetic corpus generator: a pseudo-word entity catalog
//! and passages embedding entity titles (sometimes suffix-inflected) between
//! filler words, with character-offset gold mentions that always align to
//! token boundaries.

use std::collections::{BTreeMap, HashSet};

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityRecord, GoldMention, RawPassage};
use crate::error::{BelaError, Result};

const SYLLABLES: &[&str] = &[
    "ba", "bel", "bi", "bor", "da", "del", "dor", "du", "ka", "kan", "kel", "ko", "la", "len",
    "li", "lor", "ma", "mel", "mi", "mor", "na", "nel", "ni", "nor", "ra", "rel", "ri", "ros",
    "sa", "sel", "si", "sor", "ta", "tel", "ti", "tor", "va", "vel", "vi", "vor", "za", "zel",
    "zi", "zor",
];

const CATEGORIES: &[&str] = &[
    "settlement", "river", "mountain", "festival", "guild", "observatory", "province", "harbor",
    "fortress", "archive",
];

const FILLERS: &[&str] = &[
    "the", "a", "of", "in", "on", "near", "and", "with", "from", "under", "over", "by", "at",
    "while", "many", "people", "visit", "old", "new", "great", "small", "early", "late", "during",
    "travel", "roads", "stories", "about", "tell", "every", "year", "since", "along",
];

const LANGS: &[&str] = &["en", "de", "fr"];

fn pseudo_word(rng: &mut ChaCha8Rng, capitalize: bool) -> String {
    let n = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..n {
        w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
    }
    if capitalize {
        let mut chars = w.chars();
        let first = chars.next().unwrap().to_ascii_uppercase();
        format!("{first}{}", chars.as_str())
    } else {
        w
    }
}

/// Shared pool of title words. Titles are distinct pairs from this pool, so
/// the mention-side token vocabulary stays small while titles remain unique.
/// Words are long enough (7+ chars) to split into two subword chunks, which
/// keeps span boundaries distinguishable under context-mean pooling.
const TITLE_POOL_SIZE: usize = 24;

fn title_pool(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut pool = HashSet::new();
    while pool.len() < TITLE_POOL_SIZE {
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if w.chars().count() < 7 {
            continue;
        }
        let mut chars = w.chars();
        let first = chars.next().unwrap().to_ascii_uppercase();
        pool.insert(format!("{first}{}", chars.as_str()));
    }
    let mut pool: Vec<String> = pool.into_iter().collect();
    pool.sort();
    pool
}

fn distinct_title(rng: &mut ChaCha8Rng, pool: &[String], seen: &mut HashSet<String>) -> String {
    loop {
        let a = rng.gen_range(0..pool.len());
        let b = rng.gen_range(0..pool.len());
        if a == b {
            continue;
        }
        let t = format!("{} {}", pool[a], pool[b]);
        if seen.insert(t.clone()) {
            return t;
        }
    }
}

/// Deterministic (catalog, corpus) pair. Every passage carries at least one
/// gold mention; every gold mention aligns to token boundaries under the
/// artifact tokenizer.
pub fn generate_synthetic_corpus(
    num_entities: usize,
    num_passages: usize,
    seed: u64,
) -> Result<(Vec<EntityRecord>, Vec<RawPassage>)> {
    if num_entities < 2 {
        return Err(BelaError::Invalid(
            "need at least 2 entities (negatives require a second entity)".into(),
        ));
    }
    let max_titles = TITLE_POOL_SIZE * (TITLE_POOL_SIZE - 1);
    if num_entities > max_titles {
        return Err(BelaError::Invalid(format!(
            "at most {max_titles} entities (titles are distinct word pairs)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = title_pool(&mut rng);
    let mut seen = HashSet::new();
    let mut catalog = Vec::with_capacity(num_entities);
    for idx in 0..num_entities {
        let title = distinct_title(&mut rng, &pool, &mut seen);
        let category = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let place = pseudo_word(&mut rng, true);
        let mut titles = BTreeMap::from([("en".to_string(), title.clone())]);
        let mut descriptions = BTreeMap::from([(
            "en".to_string(),
            format!("{title} is a {category} in the {place} lowlands"),
        )]);
        let en_count = rng.gen_range(2..=50u64);
        let mut mention_counts = BTreeMap::from([("en".to_string(), en_count)]);
        if rng.gen_bool(0.3) {
            titles.insert("de".to_string(), title.clone());
            descriptions.insert("de".to_string(), format!("{title} ist ein Ort bei {place}"));
            mention_counts.insert("de".to_string(), rng.gen_range(0..en_count));
        }
        catalog.push(EntityRecord {
            entity_id: format!("E{idx:04}"),
            titles,
            descriptions,
            mention_counts,
            selected_language: "en".into(),
        });
    }

    let mut corpus = Vec::with_capacity(num_passages);
    for pidx in 0..num_passages {
        let mut words: Vec<String> = Vec::new();
        let mut mentions: Vec<GoldMention> = Vec::new();
        let mut char_pos = 0usize;
        let push_words = |ws: &[String], words: &mut Vec<String>, char_pos: &mut usize| {
            for w in ws {
                if !words.is_empty() {
                    *char_pos += 1; // joining space
                }
                *char_pos += w.chars().count();
                words.push(w.clone());
            }
        };

        let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
            (0..rng.gen_range(lo..=hi))
                .map(|_| FILLERS[rng.gen_range(0..FILLERS.len())].to_string())
                .collect()
        };

        push_words(&filler(&mut rng, 1, 4), &mut words, &mut char_pos);
        let num_mentions = rng.gen_range(1..=3usize);
        let mut entity_choices: Vec<usize> = (0..num_entities).collect();
        entity_choices.shuffle(&mut rng);
        for &eidx in entity_choices.iter().take(num_mentions) {
            let title = catalog[eidx].titles["en"].clone();
            let mut surface_words: Vec<String> =
                title.split(' ').map(|s| s.to_string()).collect();
            if rng.gen_bool(0.2) {
                let last = surface_words.last_mut().unwrap();
                last.push('s');
            }
            // record the char span of the mention surface
            let start = if words.is_empty() { 0 } else { char_pos + 1 };
            push_words(&surface_words, &mut words, &mut char_pos);
            mentions.push(GoldMention {
                start,
                end: char_pos,
                entity_id: catalog[eidx].entity_id.clone(),
            });
            push_words(&filler(&mut rng, 2, 4), &mut words, &mut char_pos);
        }
        let text = words.join(" ");
        debug_assert_eq!(text.chars().count(), char_pos);
        let lang = LANGS[rng.gen_range(0..LANGS.len())].to_string();
        corpus.push(RawPassage {
            id: format!("p{pidx:05}"),
            text,
            mentions,
            lang: Some(lang),
        });
    }
    Ok((catalog, corpus))
}

/// Seeded 80/10/10 split into (train, dev, test), disjoint and covering.
pub fn split_corpus(
    corpus: Vec<RawPassage>,
    seed: u64,
) -> (Vec<RawPassage>, Vec<RawPassage>, Vec<RawPassage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5350_4c49);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n = corpus.len();
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let mut passages: Vec<Option<RawPassage>> = corpus.into_iter().map(Some).collect();
    let take = |ids: &[usize], passages: &mut Vec<Option<RawPassage>>| {
        ids.iter().map(|&i| passages[i].take().unwrap()).collect::<Vec<_>>()
    };
    let train = take(&order[..n_train], &mut passages);
    let dev = take(&order[n_train..n_train + n_dev], &mut passages);
    let test = take(&order[n_train + n_dev..], &mut passages);
    (train, dev, test)
}
