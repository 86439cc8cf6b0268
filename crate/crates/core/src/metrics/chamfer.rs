use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::voxel::Normalization;
use super::MetricError;
use crate::math::{self, cross, dist_sq, norm, sub, Vec3};
use crate::mesh::TriMesh;

pub const DEFAULT_SAMPLE_COUNT: usize = 4096;
pub const DEFAULT_SAMPLE_SEED: u64 = 0x5eed_cad0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub points: Vec<Vec3>,
    pub normalization: Option<Normalization>,
}

impl PointSample {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, normalization: None }
    }
}

/// Draws `n` points uniformly by area from the mesh surface.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointSample, MetricError> {
    if mesh.is_empty() {
        return Err(MetricError::EmptyMesh);
    }
    if n == 0 {
        return Err(MetricError::EmptySample);
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles().len());
    let mut total = 0.0;
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle(t);
        total += 0.5 * norm(cross(sub(b, a), sub(c, a)));
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let pick = rng.gen::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= pick).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let s = math::sqrt(rng.gen::<f64>());
            let u = rng.gen::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - u), s * u);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    Ok(PointSample::new(points))
}

fn mean_nearest_sq(from: &[Vec3], to: &[Vec3]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| dist_sq(*p, *q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric Chamfer distance with squared Euclidean distances:
/// mean over `a` of the nearest squared distance into `b`, plus the reverse.
pub fn chamfer_distance(a: &PointSample, b: &PointSample) -> Result<f64, MetricError> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(MetricError::EmptySample);
    }
    Ok(mean_nearest_sq(&a.points, &b.points) + mean_nearest_sq(&b.points, &a.points))
}
