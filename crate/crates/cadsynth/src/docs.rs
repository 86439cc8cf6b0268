//! Documentation corpus on disk, plus the regex grep tool.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cadsynth_core::tfidf::{DocCorpus, Document, TfIdfIndex};
use regex::Regex;
use serde::Serialize;

/// Maximum matches returned by one grep.
pub const GREP_MATCH_CAP: usize = 100;
pub const DEFAULT_GREP_CONTEXT: usize = 1;

/// Loads `dir/<doc_id>.txt`; the first line of each file is its title.
pub fn load_doc_corpus(dir: &Path) -> Result<DocCorpus> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading docs directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .txt documents in {}", dir.display());
    }
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let (title, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        let doc_id = p.file_stem().and_then(|s| s.to_str()).context("non-UTF-8 document name")?.to_string();
        docs.push(Document { doc_id, title: title.trim().to_string(), body: body.to_string() });
    }
    Ok(DocCorpus::new(docs)?)
}

/// Corpus plus its prebuilt index, shared read-only by all rollouts.
pub struct DocIndex {
    pub corpus: DocCorpus,
    pub tfidf: TfIdfIndex,
}

impl DocIndex {
    pub fn new(corpus: DocCorpus) -> Result<Self> {
        let tfidf = TfIdfIndex::build(&corpus)?;
        Ok(Self { corpus, tfidf })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(load_doc_corpus(dir)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GrepMatch {
    pub doc_id: String,
    /// 1-based line number within the document body.
    pub line_no: usize,
    pub line: String,
    pub context_before: Vec<String>,
    pub context_after: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GrepResult {
    pub matches: Vec<GrepMatch>,
    pub truncated: bool,
}

/// Matches `pattern` line by line over every document body, in doc order.
pub fn grep_documentation(corpus: &DocCorpus, pattern: &str, context: usize) -> Result<GrepResult, regex::Error> {
    let re = Regex::new(pattern)?;
    let mut out = GrepResult::default();
    for doc in &corpus.documents {
        let lines: Vec<&str> = doc.body.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if !re.is_match(line) {
                continue;
            }
            if out.matches.len() == GREP_MATCH_CAP {
                out.truncated = true;
                return Ok(out);
            }
            let lo = i.saturating_sub(context);
            let hi = (i + 1 + context).min(lines.len());
            out.matches.push(GrepMatch {
                doc_id: doc.doc_id.clone(),
                line_no: i + 1,
                line: line.to_string(),
                context_before: lines[lo..i].iter().map(|s| s.to_string()).collect(),
                context_after: lines[i + 1..hi].iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    Ok(out)
}
