//! Embedding interchange files.
//!
//! Binary layout, little-endian: magic `CEMB`, `D: u32`, `N: u32`, then
//! `N * D` float32 values row by row. A sidecar text file lists one id per
//! row. Rows that share an id are views of the same artifact.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cadsynth_core::curate::{average_view_embeddings, EmbeddingVector};
use log::warn;

pub const MAGIC: &[u8; 4] = b"CEMB";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRows {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

pub fn encode_embeddings(dim: usize, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + rows.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(dim)?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(rows.len())?.to_le_bytes());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            bail!("row {i} has dimension {}, expected {dim}", r.len());
        }
        for x in r {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingRows> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        bail!("not an embedding file (bad magic)");
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (dim, n) = (word(4), word(8));
    if dim == 0 {
        bail!("embedding dimension is 0");
    }
    let expected = n.checked_mul(dim).and_then(|c| c.checked_mul(4)).and_then(|c| c.checked_add(12)).context("header overflows")?;
    if bytes.len() != expected {
        bail!("embedding file has {} bytes, header implies {expected}", bytes.len());
    }
    let rows: Vec<Vec<f64>> = bytes[12..]
        .chunks_exact(dim * 4)
        .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
        .collect();
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        bail!("embedding file contains non-finite values");
    }
    Ok(EmbeddingRows { dim, rows })
}

pub fn write_embeddings(path: &Path, ids_path: &Path, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    if ids.len() != rows.len() {
        bail!("{} ids for {} rows", ids.len(), rows.len());
    }
    let dim = rows.first().map_or(1, Vec::len);
    std::fs::write(path, encode_embeddings(dim, rows)?).with_context(|| format!("writing {}", path.display()))?;
    let mut f = std::fs::File::create(ids_path).with_context(|| format!("writing {}", ids_path.display()))?;
    for id in ids {
        writeln!(f, "{id}")?;
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<EmbeddingRows> {
    decode_embeddings(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("decoding {}", path.display()))
}

/// Reads rows and ids, averaging rows that share an id (first-seen order).
pub fn read_embeddings(path: &Path, ids_path: &Path, expected_views: usize) -> Result<Vec<EmbeddingVector>> {
    let rows = read_rows(path)?.rows;
    let ids_text = std::fs::read_to_string(ids_path).with_context(|| format!("reading {}", ids_path.display()))?;
    let ids: Vec<&str> = ids_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if ids.len() != rows.len() {
        bail!("{} lists {} ids for {} rows", ids_path.display(), ids.len(), rows.len());
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<&Vec<f64>>> = std::collections::HashMap::new();
    for (id, row) in ids.iter().zip(&rows) {
        let g = groups.entry(id).or_default();
        if g.is_empty() {
            order.push(id);
        }
        g.push(row);
    }
    let mut out = Vec::with_capacity(order.len());
    let mut mismatched = 0;
    for id in order {
        let views = &groups[id];
        if views.len() == 1 && expected_views <= 1 {
            out.push(EmbeddingVector::new(id, views[0].clone()));
            continue;
        }
        let avg = average_view_embeddings(views, expected_views)?;
        if avg.view_count_mismatch {
            mismatched += 1;
        }
        out.push(EmbeddingVector::new(id, avg.vector));
    }
    if mismatched > 0 {
        warn!("{mismatched} artifacts had a view count other than {expected_views}");
    }
    Ok(out)
}
