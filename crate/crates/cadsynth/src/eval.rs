//! Batch evaluation over directories of meshes and embedding files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cadsynth_core::curate::EmbeddingVector;
use cadsynth_core::metrics::{
    best_rotation_iou, chamfer_distance, frechet_distance, kball_coverage, normalize_mesh, sample_surface, success_rate, EvalSample, SuccessSummary,
    DEFAULT_SAMPLE_SEED,
};
use cadsynth_core::TriMesh;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub name: String,
    pub executed_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_rotation_deg: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub resolution: usize,
    pub chamfer_samples: usize,
    pub summary: SuccessSummary,
    pub samples: Vec<SampleResult>,
}

fn chamfer_between(pred: &TriMesh, gt: &TriMesh, n: usize) -> Result<f64> {
    let (p, pn) = normalize_mesh(pred)?;
    let (g, gn) = normalize_mesh(gt)?;
    let mut a = sample_surface(&p, n, DEFAULT_SAMPLE_SEED)?;
    a.normalization = Some(pn);
    let mut b = sample_surface(&g, n, DEFAULT_SAMPLE_SEED)?;
    b.normalization = Some(gn);
    Ok(chamfer_distance(&a, &b)?)
}

/// Scores one prediction against its reference.
pub fn evaluate_pair(name: &str, pred: Option<&TriMesh>, gt: &TriMesh, resolution: usize, samples: usize) -> SampleResult {
    let failed = |error: String| SampleResult { name: name.into(), executed_ok: false, iou: None, best_rotation_deg: None, chamfer: None, error: Some(error) };
    let Some(pred) = pred else { return failed("no prediction".into()) };
    let rot = match best_rotation_iou(pred, gt, resolution) {
        Ok(r) => r,
        Err(e) => return failed(format!("iou: {e}")),
    };
    match chamfer_between(pred, gt, samples) {
        Ok(cd) => SampleResult { name: name.into(), executed_ok: true, iou: Some(rot.iou), best_rotation_deg: Some(rot.angle_deg), chamfer: Some(cd), error: None },
        Err(e) => failed(format!("chamfer: {e}")),
    }
}

/// Pairs `<name>.stl` files by name; every reference counts, missing or
/// unreadable predictions count as failures.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, resolution: usize, samples: usize) -> Result<EvalReport> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .with_context(|| format!("reading {}", gt_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".stl"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .stl files in {}", gt_dir.display());
    }
    let mut results = Vec::with_capacity(names.len());
    for name in names {
        let gt = crate::stl::read_stl(&gt_dir.join(&name)).with_context(|| format!("reference {name}"))?;
        let pred_path = pred_dir.join(&name);
        let pred = if pred_path.exists() { crate::stl::read_stl(&pred_path).ok() } else { None };
        results.push(evaluate_pair(&name, pred.as_ref(), &gt, resolution, samples));
    }
    let flat: Vec<EvalSample> = results.iter().map(|r| EvalSample { executed_ok: r.executed_ok, iou: r.iou, chamfer: r.chamfer }).collect();
    Ok(EvalReport { resolution, chamfer_samples: samples, summary: success_rate(&flat), samples: results })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub n_reference: usize,
    pub n_synthetic: usize,
    pub dim: usize,
    pub frechet_distance: f64,
    pub k: usize,
    pub kball_coverage: f64,
}

pub fn evaluate_distributions(reference: &[EmbeddingVector], synthetic: &[EmbeddingVector], k: usize) -> Result<DistributionReport> {
    let r: Vec<&[f64]> = reference.iter().map(|v| v.vector.as_slice()).collect();
    let s: Vec<&[f64]> = synthetic.iter().map(|v| v.vector.as_slice()).collect();
    Ok(DistributionReport {
        n_reference: r.len(),
        n_synthetic: s.len(),
        dim: r.first().map_or(0, |v| v.len()),
        frechet_distance: frechet_distance(&r, &s)?,
        k,
        kball_coverage: kball_coverage(&r, &s, k)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadsynth_core::shapes::{axis_box, l_bracket};

    #[test]
    fn identical_pair_scores_perfectly() {
        let m = l_bracket();
        let r = evaluate_pair("l", Some(&m), &m, 16, 256);
        assert_eq!(r.iou, Some(1.0));
        assert_eq!(r.chamfer, Some(0.0));
    }

    #[test]
    fn missing_prediction_is_a_failure() {
        let r = evaluate_pair("x", None, &axis_box([0.0; 3], [1.0; 3]), 8, 16);
        assert!(!r.executed_ok);
    }

    #[test]
    fn directory_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("pred"), dir.path().join("gt"));
        std::fs::create_dir_all(&p).unwrap();
        std::fs::create_dir_all(&g).unwrap();
        let cube = axis_box([0.0; 3], [1.0; 3]);
        for n in ["a.stl", "b.stl"] {
            crate::stl::write_stl(&g.join(n), &cube).unwrap();
        }
        crate::stl::write_stl(&p.join("a.stl"), &cube).unwrap();
        let rep = evaluate_dirs(&p, &g, 8, 64).unwrap();
        assert_eq!(rep.summary.n, 2);
        assert_eq!(rep.summary.success_rate, Some(0.5));
        assert_eq!(rep.summary.iou.unwrap().mean, 1.0);
    }
}
