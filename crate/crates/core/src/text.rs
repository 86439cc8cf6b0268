//! Text normalization, tokenization and catalog deduplication.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Jaccard threshold at or above which two descriptions are near-duplicates.
pub const NEAR_DUPLICATE_JACCARD: f64 = 0.9;

/// One catalog entry produced by the catalog stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDescription {
    pub id: String,
    pub category: String,
    pub text: String,
    #[serde(skip)]
    pub normalized_text: String,
}

impl PartDescription {
    pub fn new(id: impl Into<String>, category: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let normalized_text = normalize_text(&text);
        Self { id: id.into(), category: category.into(), text, normalized_text }
    }

    /// Recomputes `normalized_text`, e.g. after deserializing a catalog line.
    pub fn renormalize(&mut self) {
        self.normalized_text = normalize_text(&self.text);
    }

    /// True when the text looks like it carries a dimension (`10mm`, `5 in`, ...).
    pub fn mentions_dimensions(&self) -> bool {
        mentions_dimensions(&self.text)
    }
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word);
    }
    out
}

/// Lowercase tokens split on anything that is not alphanumeric or `_`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
}

const UNIT_SUFFIXES: &[&str] = &["mm", "cm", "m", "in", "inch", "inches", "ft", "deg", "degree", "degrees", "°", "\""];

/// Advisory check for digits followed by a length or angle unit.
pub fn mentions_dimensions(text: &str) -> bool {
    let lower: String = text.chars().flat_map(char::to_lowercase).collect();
    let chars: Vec<char> = lower.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            while j < chars.len() && chars[j] == ' ' {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && (chars[k].is_alphabetic() || chars[k] == '°' || chars[k] == '"') {
                k += 1;
            }
            let suffix: String = chars[j..k].iter().collect();
            if UNIT_SUFFIXES.contains(&suffix.as_str()) {
                return true;
            }
            i = k.max(i + 1);
        } else {
            i += 1;
        }
    }
    false
}

fn token_set(normalized: &str) -> BTreeSet<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Token-set Jaccard similarity of two normalized strings.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa = token_set(a);
    let sb = token_set(b);
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Removes exact duplicates under `normalized_text` (first occurrence wins,
/// order preserved). With `near_duplicates`, also drops any item whose
/// Jaccard similarity with an already kept item is at least
/// [`NEAR_DUPLICATE_JACCARD`].
pub fn deduplicate_descriptions(descriptions: Vec<PartDescription>, near_duplicates: bool) -> Vec<PartDescription> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut kept: Vec<PartDescription> = Vec::with_capacity(descriptions.len());
    for mut d in descriptions {
        if d.normalized_text.is_empty() {
            d.renormalize();
        }
        if seen.contains(&d.normalized_text) {
            continue;
        }
        if near_duplicates
            && kept.iter().any(|k| jaccard(&k.normalized_text, &d.normalized_text) >= NEAR_DUPLICATE_JACCARD)
        {
            continue;
        }
        seen.insert(d.normalized_text.clone());
        kept.push(d);
    }
    kept
}
