//! TF-IDF retrieval over a plain-text documentation corpus.
//!
//! Weights are `tf(t, d) * ln(N / df(t))` with raw term counts and no
//! smoothing; document vectors are L2-normalized and queries are scored by
//! cosine similarity. When every query term has zero idf (a single-document
//! corpus, or terms present in every document) scoring falls back to cosine
//! over raw term frequencies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::text::tokenize;

pub const SNIPPET_CHARS: usize = 500;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocCorpus {
    pub documents: Vec<Document>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("documentation corpus is empty")]
    Empty,
    #[error("duplicate doc id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("top-k must be at least 1")]
    ZeroK,
}

impl DocCorpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut ids = BTreeMap::new();
        for d in &documents {
            if d.body.trim().is_empty() {
                return Err(CorpusError::EmptyBody(d.doc_id.clone()));
            }
            if ids.insert(d.doc_id.as_str(), ()).is_some() {
                return Err(CorpusError::DuplicateId(d.doc_id.clone()));
            }
        }
        Ok(Self { documents })
    }

    /// Builds a corpus of untitled documents from `(doc_id, body)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, CorpusError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, body)| Document { doc_id: id.into(), title: String::new(), body: body.into() })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

type SparseVec = Vec<(usize, f64)>;

/// Immutable TF-IDF index.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocabulary: BTreeMap<String, usize>,
    doc_freq: Vec<u32>,
    doc_count: usize,
    doc_ids: Vec<String>,
    snippets: Vec<String>,
    tfidf_vectors: Vec<SparseVec>,
    tf_vectors: Vec<SparseVec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupHit {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupResult {
    pub results: Vec<LookupHit>,
    /// The query contained no indexed term.
    pub no_matches: bool,
    /// Scores came from raw term frequencies because every query term had zero idf.
    pub tf_fallback: bool,
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

fn l2_normalize(v: &mut SparseVec) {
    let n = math::sqrt(v.iter().map(|(_, w)| w * w).sum());
    if n > 0.0 {
        for (_, w) in v.iter_mut() {
            *w /= n;
        }
    }
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    // Both sorted by term id.
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

impl TfIdfIndex {
    /// Indexes title and body of every document.
    pub fn build(corpus: &DocCorpus) -> Result<Self, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::Empty);
        }
        let per_doc: Vec<BTreeMap<String, u32>> = corpus
            .documents
            .iter()
            .map(|d| {
                let mut text = d.title.clone();
                text.push('\n');
                text.push_str(&d.body);
                term_counts(&text)
            })
            .collect();

        let mut vocabulary = BTreeMap::new();
        let mut doc_freq: Vec<u32> = Vec::new();
        for counts in &per_doc {
            for term in counts.keys() {
                let next = vocabulary.len();
                let id = *vocabulary.entry(term.clone()).or_insert(next);
                if id == doc_freq.len() {
                    doc_freq.push(0);
                }
                doc_freq[id] += 1;
            }
        }

        let n = corpus.len() as f64;
        let mut tfidf_vectors = Vec::with_capacity(per_doc.len());
        let mut tf_vectors = Vec::with_capacity(per_doc.len());
        for counts in &per_doc {
            let mut tfidf: SparseVec = Vec::with_capacity(counts.len());
            let mut tf: SparseVec = Vec::with_capacity(counts.len());
            for (term, &c) in counts {
                let id = vocabulary[term];
                let idf = math::ln(n / doc_freq[id] as f64);
                tfidf.push((id, c as f64 * idf));
                tf.push((id, c as f64));
            }
            tfidf.sort_by_key(|e| e.0);
            tf.sort_by_key(|e| e.0);
            l2_normalize(&mut tfidf);
            l2_normalize(&mut tf);
            tfidf_vectors.push(tfidf);
            tf_vectors.push(tf);
        }

        Ok(Self {
            vocabulary,
            doc_freq,
            doc_count: corpus.len(),
            doc_ids: corpus.documents.iter().map(|d| d.doc_id.clone()).collect(),
            snippets: corpus.documents.iter().map(|d| d.body.chars().take(SNIPPET_CHARS).collect()).collect(),
            tfidf_vectors,
            tf_vectors,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn doc_freq(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).map(|&id| self.doc_freq[id])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.doc_freq(term).map(|df| math::ln(self.doc_count as f64 / df as f64))
    }

    /// Normalized weight of `term` in document `doc_id` (0 when absent).
    pub fn weight(&self, term: &str, doc_id: &str) -> Option<f64> {
        let d = self.doc_ids.iter().position(|id| id == doc_id)?;
        let Some(&t) = self.vocabulary.get(term) else { return Some(0.0) };
        Some(self.tfidf_vectors[d].iter().find(|(id, _)| *id == t).map_or(0.0, |(_, w)| *w))
    }

    /// Top-`k` documents by cosine similarity; ties break by ascending doc id.
    pub fn lookup(&self, query: &str, k: usize) -> Result<LookupResult, CorpusError> {
        if k == 0 {
            return Err(CorpusError::ZeroK);
        }
        let mut tf: SparseVec = term_counts(query)
            .into_iter()
            .filter_map(|(term, c)| self.vocabulary.get(&term).map(|&id| (id, c as f64)))
            .collect();
        if tf.is_empty() {
            return Ok(LookupResult { results: Vec::new(), no_matches: true, tf_fallback: false });
        }
        tf.sort_by_key(|e| e.0);

        let mut tfidf: SparseVec = tf
            .iter()
            .map(|&(id, c)| (id, c * math::ln(self.doc_count as f64 / self.doc_freq[id] as f64)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        let tf_fallback = tfidf.is_empty();
        let (query_vec, doc_vecs) = if tf_fallback {
            l2_normalize(&mut tf);
            (tf, &self.tf_vectors)
        } else {
            l2_normalize(&mut tfidf);
            (tfidf, &self.tfidf_vectors)
        };

        let mut scored: Vec<(usize, f64)> = doc_vecs
            .iter()
            .enumerate()
            .map(|(d, v)| (d, sparse_dot(&query_vec, v).clamp(0.0, 1.0)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0])));
        scored.truncate(k);

        Ok(LookupResult {
            results: scored
                .into_iter()
                .map(|(d, score)| LookupHit { doc_id: self.doc_ids[d].clone(), score, snippet: self.snippets[d].clone() })
                .collect(),
            no_matches: false,
            tf_fallback,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_docs() -> DocCorpus {
        DocCorpus::from_pairs([("d1", "fillet edges"), ("d2", "chamfer edges"), ("d3", "extrude sketch")]).unwrap()
    }

    #[test]
    fn document_frequencies() {
        let idx = TfIdfIndex::build(&three_docs()).unwrap();
        assert_eq!(idx.doc_freq("fillet"), Some(1));
        assert_eq!(idx.doc_freq("edges"), Some(2));
        assert_eq!(idx.doc_freq("zorblax"), None);
    }

    #[test]
    fn empty_corpus_fails() {
        assert_eq!(TfIdfIndex::build(&DocCorpus::default()).unwrap_err(), CorpusError::Empty);
    }

    #[test]
    fn corpus_rejects_duplicates_and_empty_bodies() {
        assert!(matches!(DocCorpus::from_pairs([("a", "x"), ("a", "y")]), Err(CorpusError::DuplicateId(_))));
        assert!(matches!(DocCorpus::from_pairs([("a", "  ")]), Err(CorpusError::EmptyBody(_))));
    }

    #[test]
    fn unknown_query_is_flagged_not_error() {
        let idx = TfIdfIndex::build(&three_docs()).unwrap();
        let r = idx.lookup("zorblax", 5).unwrap();
        assert!(r.no_matches);
        assert!(r.results.is_empty());
        assert_eq!(idx.lookup("fillet", 0), Err(CorpusError::ZeroK));
    }

    #[test]
    fn single_document_falls_back_to_tf() {
        let corpus = DocCorpus::from_pairs([("only", "workplane box fillet fillet")]).unwrap();
        let idx = TfIdfIndex::build(&corpus).unwrap();
        assert_eq!(idx.idf("fillet"), Some(0.0));
        assert_eq!(idx.weight("fillet", "only"), Some(0.0));
        let r = idx.lookup("fillet", 3).unwrap();
        assert!(r.tf_fallback);
        assert_eq!(r.results.len(), 1);
        // tf vector (box 1, fillet 2, workplane 1) / sqrt(6); query = fillet.
        assert!((r.results[0].score - 2.0 / math::sqrt(6.0)).abs() < 1e-12);
    }

    #[test]
    fn snippet_is_first_500_chars() {
        let body: String = "é".repeat(800);
        let corpus = DocCorpus::new(alloc::vec![Document { doc_id: "a".into(), title: "accent".into(), body }]).unwrap();
        let idx = TfIdfIndex::build(&corpus).unwrap();
        let r = idx.lookup("accent", 1).unwrap();
        assert_eq!(r.results[0].snippet.chars().count(), SNIPPET_CHARS);
    }
}
