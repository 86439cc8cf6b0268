use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::percentile_sorted;

/// One evaluated generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub executed_ok: bool,
    pub iou: Option<f64>,
    pub chamfer: Option<f64>,
}

/// Mean and nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
}

impl DistributionStats {
    pub fn from_values(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: percentile_sorted(&values, 50.0)?,
            p75: percentile_sorted(&values, 75.0)?,
            p90: percentile_sorted(&values, 90.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    pub n: usize,
    pub n_success: usize,
    /// Fraction of executable generations; absent when there are no samples.
    pub success_rate: Option<f64>,
    pub iou: Option<DistributionStats>,
    pub chamfer: Option<DistributionStats>,
}

impl SuccessSummary {
    pub fn success_percent(&self) -> Option<f64> {
        self.success_rate.map(|r| r * 100.0)
    }
}

/// Success fraction, plus IoU / Chamfer statistics over successful samples only.
pub fn success_rate(results: &[EvalSample]) -> SuccessSummary {
    let ok: Vec<&EvalSample> = results.iter().filter(|r| r.executed_ok).collect();
    SuccessSummary {
        n: results.len(),
        n_success: ok.len(),
        success_rate: (!results.is_empty()).then(|| ok.len() as f64 / results.len() as f64),
        iou: DistributionStats::from_values(ok.iter().filter_map(|r| r.iou).collect()),
        chamfer: DistributionStats::from_values(ok.iter().filter_map(|r| r.chamfer).collect()),
    }
}
