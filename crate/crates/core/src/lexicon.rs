//! Word-definition ingestion and masked-LM instance construction.
//!
//! The input is UTF-8 text with one `headword<TAB>definition` record per
//! line. Records sharing a headword merge, in order of first appearance.

use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::{is_special, tokenize, FIRST_CONTENT_ID, MASK};

pub const DEFAULT_MASK_RATE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub headword: String,
    pub definitions: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub entries: usize,
    pub definitions: usize,
    pub duplicates: usize,
    pub malformed: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
    pub stats: IngestStats,
}

/// `"1)"`, `"(2)"` and the like.
fn is_sense_number(word: &str) -> bool {
    let inner = word.strip_prefix('(').unwrap_or(word);
    match inner.strip_suffix(')') {
        Some(digits) => !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()),
        None => false,
    }
}

/// Tokens of one definition with sense numbers removed.
pub fn definition_tokens(definition: &str) -> Vec<String> {
    definition
        .split_whitespace()
        .filter(|w| !is_sense_number(w))
        .flat_map(tokenize)
        .collect()
}

pub fn parse_lexicon_str(text: &str) -> Result<Lexicon> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut merged: IndexMap<String, Vec<String>> = IndexMap::new();
    let mut stats = IngestStats::default();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(head), Some(def), None) = (fields.next(), fields.next(), fields.next()) else {
            stats.malformed += 1;
            continue;
        };
        let (head, def) = (head.trim(), def.trim());
        if tokenize(head).is_empty() || definition_tokens(def).is_empty() {
            stats.malformed += 1;
            continue;
        }
        let defs = merged.entry(head.to_string()).or_default();
        if defs.iter().any(|d| d == def) {
            stats.duplicates += 1;
        } else {
            defs.push(def.to_string());
        }
    }
    if merged.is_empty() {
        return Err(Error::parse("lexicon", "no valid entries"));
    }
    let entries: Vec<LexiconEntry> = merged
        .into_iter()
        .map(|(headword, definitions)| LexiconEntry {
            headword,
            definitions,
        })
        .collect();
    stats.entries = entries.len();
    stats.definitions = entries.iter().map(|e| e.definitions.len()).sum();
    Ok(Lexicon { entries, stats })
}

pub fn parse_lexicon_bytes(bytes: &[u8]) -> Result<Lexicon> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::parse("lexicon", format!("not UTF-8: {e}")))?;
    parse_lexicon_str(text)
}

pub fn parse_lexicon(path: &Path) -> Result<Lexicon> {
    parse_lexicon_bytes(&std::fs::read(path)?)
}

/// One record per line, grouped by headword, in entry order.
pub fn serialize_lexicon(entries: &[LexiconEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        for d in &e.definitions {
            out.push_str(&e.headword);
            out.push('\t');
            out.push_str(d);
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInstance {
    pub tokens: Vec<String>,
}

/// Headword tokens followed by every definition's tokens, truncated to
/// `max_seq_len - 2` so `[CLS]` and `[SEP]` still fit. Returns the
/// instances and the number that were truncated.
pub fn build_instances(
    entries: &[LexiconEntry],
    max_seq_len: usize,
) -> Result<(Vec<TrainingInstance>, usize)> {
    if max_seq_len < 3 {
        return Err(Error::invalid(format!(
            "max_seq_len {max_seq_len} leaves no room for a headword"
        )));
    }
    let room = max_seq_len - 2;
    let mut truncated = 0;
    let instances = entries
        .iter()
        .map(|e| {
            let mut tokens = tokenize(&e.headword);
            for d in &e.definitions {
                tokens.extend(definition_tokens(d));
            }
            if tokens.len() > room {
                tokens.truncate(room);
                truncated += 1;
            }
            TrainingInstance { tokens }
        })
        .collect();
    Ok((instances, truncated))
}

/// Line-delimited `{"tokens": [...]}` records.
pub fn write_corpus(instances: &[TrainingInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).map_err(|e| Error::parse("corpus", e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: TrainingInstance = serde_json::from_str(line)
            .map_err(|e| Error::parse("corpus", format!("line {}: {e}", i + 1)))?;
        if inst.tokens.is_empty() || inst.tokens.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::parse(
                "corpus",
                format!("line {}: empty instance or token", i + 1),
            ));
        }
        out.push(inst);
    }
    if out.is_empty() {
        return Err(Error::parse("corpus", "no instances"));
    }
    Ok(out)
}

pub fn parse_corpus_bytes(bytes: &[u8]) -> Result<Vec<TrainingInstance>> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::parse("corpus", format!("not UTF-8: {e}")))?;
    parse_corpus_str(text)
}

/// A corrupted sequence and the original ids at the selected positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInstance {
    pub ids: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

impl MaskedInstance {
    /// Undoes the corruption.
    pub fn reconstruct(&self) -> Vec<u32> {
        let mut ids = self.ids.clone();
        for &(p, original) in &self.targets {
            ids[p] = original;
        }
        ids
    }
}

/// Selects each content position with probability `rate` (one is forced if
/// none is drawn), then replaces it with `[MASK]` 80% of the time, a random
/// content id 10%, and leaves it unchanged 10%.
pub fn mask_instance(ids: &[u32], vocab_size: usize, rate: f64, seed: u64) -> Result<MaskedInstance> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("mask rate {rate} outside (0, 1)")));
    }
    if vocab_size <= FIRST_CONTENT_ID as usize {
        return Err(Error::invalid("vocabulary has no content tokens"));
    }
    let content: Vec<usize> = (0..ids.len()).filter(|&i| !is_special(ids[i])).collect();
    if content.is_empty() {
        return Err(Error::invalid("instance has no maskable tokens"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = content
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < rate)
        .collect();
    if selected.is_empty() {
        selected.push(content[rng.random_range(0..content.len())]);
    }
    let mut out = ids.to_vec();
    let mut targets = Vec::with_capacity(selected.len());
    for p in selected {
        targets.push((p, ids[p]));
        let r: f64 = rng.random();
        if r < 0.8 {
            out[p] = MASK;
        } else if r < 0.9 {
            out[p] = rng.random_range(FIRST_CONTENT_ID..vocab_size as u32);
        }
    }
    Ok(MaskedInstance { ids: out, targets })
}
