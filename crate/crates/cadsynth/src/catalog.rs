//! Stage one: category taxonomy, batched description generation and the
//! catalog index file.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cadsynth_core::text::{deduplicate_descriptions, PartDescription};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, SamplingParams, UsageCounters};

pub const DEFAULT_BATCH_SIZE: usize = 200;
const FORMAT_REMINDER: &str = "Your reply could not be parsed. Output only a JSON array of strings, with no other text.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub target_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_snippet: Option<String>,
    /// Path, relative to the taxonomy file, read into `reference_snippet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_snippet_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub categories: Vec<CategorySpec>,
}

impl Taxonomy {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading taxonomy {}", path.display()))?;
        let mut t: Taxonomy = serde_json::from_str(&text).with_context(|| format!("parsing taxonomy {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut t.categories {
            if let (None, Some(file)) = (&c.reference_snippet, &c.reference_snippet_file) {
                let p = base.join(file);
                c.reference_snippet = Some(std::fs::read_to_string(&p).with_context(|| format!("reading snippet {}", p.display()))?);
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.categories {
            if c.name.trim().is_empty() {
                bail!("category with empty name");
            }
            if !seen.insert(c.name.as_str()) {
                bail!("duplicate category `{}`", c.name);
            }
            if c.target_count == 0 {
                bail!("category `{}` has target_count 0", c.name);
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| c.name == name)
    }
}

pub fn render_prompt(template: &str, category: &str, batch_size: usize) -> String {
    template.replace("{batch_size}", &batch_size.to_string()).replace("{category}", category)
}

/// Lowercase ASCII slug for ids: `L-Bracket` -> `l-bracket`.
pub fn slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('-') && !s.is_empty() {
            s.push('-');
        }
    }
    s.trim_end_matches('-').to_string()
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reply was not a JSON array of strings after one reprompt")]
    Format,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn parse_items(reply: &str) -> Option<Vec<String>> {
    let items: Vec<String> = serde_json::from_str(reply.trim()).ok()?;
    Some(items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    pub items: Vec<String>,
    pub reprompts: u32,
    pub usage: UsageCounters,
}

/// Requests one batch for `category`; a malformed reply gets one reprompt.
pub fn generate_catalog_batch(
    category: &CategorySpec,
    batch_size: usize,
    llm: &dyn ChatBackend,
    template: &str,
    sampling: &SamplingParams,
) -> Result<BatchResult, CatalogError> {
    let mut messages = vec![
        ChatMessage::system(render_prompt(template, &category.name, batch_size)),
        ChatMessage::user(format!("Generate {batch_size} part descriptions for the category \"{}\".", category.name)),
    ];
    let mut out = BatchResult::default();
    loop {
        let resp = llm.chat_complete(&ChatRequest { messages: messages.clone(), tools: vec![], sampling: sampling.clone() })?;
        out.usage += resp.usage;
        if let Some(items) = parse_items(&resp.message.content) {
            if items.len() < batch_size {
                info!("{}: partial batch, {} of {batch_size}", category.name, items.len());
            }
            out.items = items;
            return Ok(out);
        }
        if out.reprompts == 1 {
            return Err(CatalogError::Format);
        }
        out.reprompts += 1;
        messages.push(resp.message);
        messages.push(ChatMessage::user(FORMAT_REMINDER));
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CatalogSummary {
    pub per_category: BTreeMap<String, usize>,
    pub batches: usize,
    pub batch_errors: usize,
    pub reprompts: u32,
    pub dimension_warnings: usize,
}

/// Fills every category up to its target, then deduplicates globally.
/// Stops a category early after a batch that adds nothing new.
pub fn build_catalog(
    taxonomy: &Taxonomy,
    batch_size: usize,
    llm: &dyn ChatBackend,
    template: &str,
    sampling: &SamplingParams,
    near_duplicates: bool,
) -> (Vec<PartDescription>, CatalogSummary) {
    let mut summary = CatalogSummary::default();
    let mut all = Vec::new();
    for cat in &taxonomy.categories {
        let mut kept: Vec<PartDescription> = Vec::new();
        let max_batches = cat.target_count.div_ceil(batch_size) * 3;
        for _ in 0..max_batches {
            if kept.len() >= cat.target_count {
                break;
            }
            summary.batches += 1;
            let batch = match generate_catalog_batch(cat, batch_size, llm, template, sampling) {
                Ok(b) => b,
                Err(e) => {
                    warn!("{}: batch failed: {e}", cat.name);
                    summary.batch_errors += 1;
                    if matches!(e, CatalogError::Llm(ref l) if l.is_retryable() || matches!(l, LlmError::ScriptExhausted(_))) {
                        break;
                    }
                    continue;
                }
            };
            summary.reprompts += batch.reprompts;
            let before = kept.len();
            let base = slug(&cat.name);
            let mut merged = std::mem::take(&mut kept);
            merged.extend(batch.items.into_iter().enumerate().map(|(i, t)| PartDescription::new(format!("{base}-tmp{i}"), &cat.name, t)));
            kept = deduplicate_descriptions(merged, near_duplicates);
            kept.truncate(cat.target_count);
            for (i, d) in kept.iter_mut().enumerate() {
                d.id = format!("{base}-{:05}", i + 1);
            }
            if kept.len() == before {
                break;
            }
        }
        summary.dimension_warnings += kept.iter().filter(|d| d.mentions_dimensions()).count();
        all.extend(kept);
    }
    let all = deduplicate_descriptions(all, near_duplicates);
    for d in &all {
        *summary.per_category.entry(d.category.clone()).or_insert(0) += 1;
    }
    (all, summary)
}

pub fn write_catalog(path: &Path, descriptions: &[PartDescription]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for d in descriptions {
        serde_json::to_writer(&mut f, d)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_catalog(path: &Path) -> Result<Vec<PartDescription>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading catalog {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut d: PartDescription = serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if d.text.trim().is_empty() {
            bail!("{} line {}: empty description", path.display(), i + 1);
        }
        d.renormalize();
        out.push(d);
    }
    Ok(out)
}
