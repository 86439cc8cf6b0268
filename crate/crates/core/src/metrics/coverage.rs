use alloc::vec::Vec;

use super::MetricError;
use crate::math::dist_sq_slice;

/// Fraction of reference points having at least one synthetic point within
/// their `k`-th nearest *other* reference point's distance.
pub fn kball_coverage<V: AsRef<[f64]>>(reference: &[V], synthetic: &[V], k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::Invalid("k must be at least 1".into()));
    }
    if reference.len() <= k {
        return Err(MetricError::TooFewVectors { needed: k + 1, got: reference.len() });
    }
    let d = reference[0].as_ref().len();
    if let Some(bad) = reference.iter().chain(synthetic).map(|v| v.as_ref().len()).find(|&l| l != d) {
        return Err(MetricError::DimensionMismatch(d, bad));
    }

    let mut scratch: Vec<f64> = Vec::with_capacity(reference.len() - 1);
    let mut covered = 0usize;
    for (i, r) in reference.iter().enumerate() {
        let r = r.as_ref();
        scratch.clear();
        scratch.extend(reference.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, o)| dist_sq_slice(r, o.as_ref())));
        let (_, radius_sq, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        let radius_sq = *radius_sq;
        if synthetic.iter().any(|s| dist_sq_slice(r, s.as_ref()) <= radius_sq) {
            covered += 1;
        }
    }
    Ok(covered as f64 / reference.len() as f64)
}
