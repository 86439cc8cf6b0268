use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::math::{self, Vec3};
use crate::mesh::{mesh_is_watertight, TriMesh};

pub const DEFAULT_RESOLUTION: usize = 64;
/// Rotation angles about +z tried by [`best_rotation_iou`].
pub const ROTATION_STEPS_DEG: [u32; 8] = [0, 45, 90, 135, 180, 225, 270, 315];

const RAY_NUDGE: f64 = 1e-7;
const MAX_NUDGES: u32 = 16;
/// Barycentric coordinates closer to zero than this count as an edge/vertex hit.
const EDGE_EPS: f64 = 1e-10;

/// Transform applied by [`normalize_mesh`]: `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

/// Centers the bounding box at the origin and scales the longest edge to 1.
pub fn normalize_mesh(mesh: &TriMesh) -> Result<(TriMesh, Normalization), MetricError> {
    let (lo, hi) = mesh.bounds().ok_or(MetricError::EmptyMesh)?;
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let longest = ext[0].max(ext[1]).max(ext[2]);
    let shortest = ext[0].min(ext[1]).min(ext[2]);
    if !(longest > 0.0) || shortest <= longest * 1e-12 {
        return Err(MetricError::ZeroExtent);
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let scale = 1.0 / longest;
    let normalized = mesh.map_vertices(|v| [(v[0] - center[0]) * scale, (v[1] - center[1]) * scale, (v[2] - center[2]) * scale]);
    Ok((normalized, Normalization { center, scale }))
}

/// Rotation about +z by `degrees` (counter-clockwise seen from +z). Multiples
/// of 45 degrees use exact sine/cosine values.
pub fn rotate_z(mesh: &TriMesh, degrees: f64) -> TriMesh {
    let r = core::f64::consts::FRAC_1_SQRT_2;
    let exact = [(0.0, 1.0), (r, r), (1.0, 0.0), (r, -r), (0.0, -1.0), (-r, -r), (-1.0, 0.0), (-r, r)];
    let wrapped = degrees % 360.0 + if degrees % 360.0 < 0.0 { 360.0 } else { 0.0 };
    let (s, c) = if (wrapped / 45.0 - math::round(wrapped / 45.0)).abs() < 1e-12 {
        exact[(math::round(wrapped / 45.0) as usize) % 8]
    } else {
        math::sin_cos(degrees.to_radians())
    };
    mesh.map_vertices(|v| [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]])
}

/// Dense `R^3` occupancy over `[-0.5, 0.5]^3`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: usize,
    bits: Vec<u64>,
    pub normalization: Option<Normalization>,
}

impl OccupancyGrid {
    pub fn empty(resolution: usize) -> Result<Self, MetricError> {
        if resolution < 2 {
            return Err(MetricError::Resolution(resolution));
        }
        let cells = resolution * resolution * resolution;
        Ok(Self { resolution, bits: alloc::vec![0; cells.div_ceil(64)], normalization: None })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        let n = self.index(i, j, k);
        self.bits[n / 64] >> (n % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let n = self.index(i, j, k);
        if value {
            self.bits[n / 64] |= 1 << (n % 64);
        } else {
            self.bits[n / 64] &= !(1 << (n % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn total(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.count() as f64 / self.total() as f64
    }

    /// Coordinate of cell center `i` along any axis.
    pub fn center(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) / self.resolution as f64
    }

    fn check_same(&self, other: &Self) -> Result<(), MetricError> {
        if self.resolution != other.resolution {
            return Err(MetricError::ResolutionMismatch(self.resolution, other.resolution));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize, MetricError> {
        self.check_same(other)?;
        Ok(self.bits.iter().zip(&other.bits).map(|(a, b)| (a & b).count_ones() as usize).sum())
    }

    pub fn union_count(&self, other: &Self) -> Result<usize, MetricError> {
        self.check_same(other)?;
        Ok(self.bits.iter().zip(&other.bits).map(|(a, b)| (a | b).count_ones() as usize).sum())
    }
}

enum RowHit {
    Crossings(Vec<f64>),
    Degenerate,
}

/// All x-coordinates where the line `(., y, z)` crosses the given triangles.
fn row_crossings(mesh: &TriMesh, tris: &[usize], y: f64, z: f64) -> RowHit {
    let mut xs = Vec::with_capacity(tris.len());
    for &t in tris {
        let [a, b, c] = mesh.triangle(t);
        let area2 = (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1]);
        if area2.abs() < 1e-18 {
            // Parallel to the ray; neighbours carry the crossing.
            continue;
        }
        let edge = |p: Vec3, q: Vec3| (q[1] - p[1]) * (z - p[2]) - (q[2] - p[2]) * (y - p[1]);
        let l0 = edge(b, c) / area2;
        let l1 = edge(c, a) / area2;
        let l2 = edge(a, b) / area2;
        if l0 < -EDGE_EPS || l1 < -EDGE_EPS || l2 < -EDGE_EPS {
            continue;
        }
        if l0 <= EDGE_EPS || l1 <= EDGE_EPS || l2 <= EDGE_EPS {
            return RowHit::Degenerate;
        }
        xs.push(l0 * a[0] + l1 * b[0] + l2 * c[0]);
    }
    xs.sort_by(f64::total_cmp);
    RowHit::Crossings(xs)
}

/// Marks each cell whose center lies inside the solid, by parity of +x ray
/// crossings. Expects a normalized mesh (see [`normalize_mesh`]).
pub fn voxelize(mesh: &TriMesh, resolution: usize) -> Result<OccupancyGrid, MetricError> {
    if mesh.is_empty() {
        return Err(MetricError::EmptyMesh);
    }
    if !mesh_is_watertight(mesh) {
        return Err(MetricError::NotWatertight);
    }
    let mut grid = OccupancyGrid::empty(resolution)?;
    let r = resolution;

    // Bucket triangles by the (j, k) rows their yz-extent can reach,
    // widened by one cell for perturbed rays.
    let mut buckets: Vec<Vec<usize>> = alloc::vec![Vec::new(); r * r];
    let cell = |v: f64| -> isize { math::floor((v + 0.5) * r as f64 - 0.5) as isize };
    for t in 0..mesh.triangles().len() {
        let tri = mesh.triangle(t);
        let (ymin, ymax) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        let (zmin, zmax) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
        let (j0, j1) = ((cell(ymin) - 1).max(0), (cell(ymax) + 2).min(r as isize - 1));
        let (k0, k1) = ((cell(zmin) - 1).max(0), (cell(zmax) + 2).min(r as isize - 1));
        for k in k0..=k1 {
            for j in j0..=j1 {
                buckets[k as usize * r + j as usize].push(t);
            }
        }
    }

    for k in 0..r {
        for j in 0..r {
            let tris = &buckets[k * r + j];
            if tris.is_empty() {
                continue;
            }
            let (y, z) = (grid.center(j), grid.center(k));
            let mut crossings = None;
            for nudge in 0..=MAX_NUDGES {
                // Unequal y/z steps so the nudge never runs along a 45-degree edge.
                let (dy, dz) = (RAY_NUDGE * nudge as f64, RAY_NUDGE * 0.618_033_988_75 * nudge as f64);
                if let RowHit::Crossings(xs) = row_crossings(mesh, tris, y + dy, z + dz) {
                    crossings = Some(xs);
                    break;
                }
            }
            let xs = crossings.ok_or(MetricError::RayDegenerate)?;
            if xs.is_empty() {
                continue;
            }
            for i in 0..r {
                let cx = grid.center(i);
                if xs.partition_point(|&x| x < cx) % 2 == 1 {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouValue {
    pub iou: f64,
    /// Both grids were empty; `iou` is reported as 0.
    pub both_empty: bool,
}

/// `|a ∧ b| / |a ∨ b|`, with empty-vs-empty defined as 0 and flagged.
pub fn grid_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<IouValue, MetricError> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(IouValue { iou: 0.0, both_empty: true });
    }
    Ok(IouValue { iou: a.intersection_count(b)? as f64 / union as f64, both_empty: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatch {
    pub iou: f64,
    pub angle_deg: u32,
}

/// Maximum IoU over the eight 45-degree rotations of `pred` about z.
/// Each rotated copy is normalized and voxelized independently; the first
/// angle wins ties.
pub fn best_rotation_iou(pred: &TriMesh, gt: &TriMesh, resolution: usize) -> Result<RotationMatch, MetricError> {
    let (gt_n, _) = normalize_mesh(gt)?;
    let gt_grid = voxelize(&gt_n, resolution)?;
    let mut best: Option<RotationMatch> = None;
    for angle in ROTATION_STEPS_DEG {
        let (rotated, _) = normalize_mesh(&rotate_z(pred, angle as f64))?;
        let iou = grid_iou(&voxelize(&rotated, resolution)?, &gt_grid)?.iou;
        if best.is_none_or(|b| iou > b.iou) {
            best = Some(RotationMatch { iou, angle_deg: angle });
        }
    }
    Ok(best.expect("at least one rotation"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{axis_box, extrude_polygon};

    #[test]
    fn normalize_offset_cube() {
        let (m, t) = normalize_mesh(&axis_box([5.0; 3], [105.0; 3])).unwrap();
        assert_eq!(t.center, [55.0; 3]);
        assert!((t.scale - 0.01).abs() < 1e-15);
        let (lo, hi) = m.bounds().unwrap();
        for k in 0..3 {
            assert!((lo[k] + 0.5).abs() < 1e-12 && (hi[k] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_flat_and_empty() {
        let quad = TriMesh::new(
            alloc::vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            alloc::vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        assert_eq!(normalize_mesh(&quad).unwrap_err(), MetricError::ZeroExtent);
        assert_eq!(normalize_mesh(&TriMesh::default()).unwrap_err(), MetricError::EmptyMesh);
    }

    #[test]
    fn domain_filling_cube_occupies_every_cell() {
        // Oracle: every R=4 center (+-0.125, +-0.375) lies strictly inside
        // [-0.5, 0.5]^3, so all 64 cells are occupied. Several centers sit on
        // the y = z face diagonals, which exercises ray perturbation.
        let cube = axis_box([-0.5; 3], [0.5; 3]);
        let g = voxelize(&cube, 4).unwrap();
        assert_eq!(g.count(), 64);
    }

    #[test]
    fn half_box_center_oracle() {
        // Box x in [-0.5, 0] covers exactly the centers with x < 0: half the grid.
        let b = axis_box([-0.5, -0.5, -0.5], [0.0, 0.5, 0.5]);
        let g = voxelize(&b, 8).unwrap();
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    assert_eq!(g.get(i, j, k), g.center(i) < 0.0);
                }
            }
        }
    }

    #[test]
    fn voxelize_errors() {
        assert_eq!(voxelize(&TriMesh::default(), 8).unwrap_err(), MetricError::EmptyMesh);
        let cube = axis_box([-0.5; 3], [0.5; 3]);
        let soup: Vec<[Vec3; 3]> = (1..12).map(|t| cube.triangle(t)).collect();
        assert_eq!(voxelize(&TriMesh::from_soup(&soup).unwrap(), 8).unwrap_err(), MetricError::NotWatertight);
        assert_eq!(voxelize(&cube, 1).unwrap_err(), MetricError::Resolution(1));
    }

    #[test]
    fn iou_counting() {
        let mut a = OccupancyGrid::empty(4).unwrap();
        let mut b = OccupancyGrid::empty(4).unwrap();
        for n in 0..32 {
            a.set(n % 4, (n / 4) % 4, n / 16, true);
            if n < 16 {
                b.set(n % 4, (n / 4) % 4, n / 16, true);
            }
        }
        assert_eq!(grid_iou(&a, &b).unwrap().iou, 0.5);
        assert_eq!(grid_iou(&a, &a).unwrap().iou, 1.0);
        let empty = OccupancyGrid::empty(4).unwrap();
        assert_eq!(grid_iou(&empty, &empty).unwrap(), IouValue { iou: 0.0, both_empty: true });
        assert!(matches!(grid_iou(&a, &OccupancyGrid::empty(8).unwrap()), Err(MetricError::ResolutionMismatch(4, 8))));
    }

    #[test]
    fn exact_quarter_turn() {
        let m = axis_box([1.0, 0.0, 0.0], [2.0, 1.0, 1.0]);
        let r = rotate_z(&m, 90.0);
        let (lo, hi) = r.bounds().unwrap();
        assert_eq!((lo, hi), ([-1.0, 1.0, 0.0], [0.0, 2.0, 1.0]));
    }

    #[test]
    fn triangle_prism_is_voxelized() {
        let tri = extrude_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 0.0, 1.0);
        let (n, _) = normalize_mesh(&tri).unwrap();
        let g = voxelize(&n, 16).unwrap();
        let f = g.occupied_fraction();
        assert!((f - 0.5).abs() < 0.05, "fraction {f}");
    }
}
