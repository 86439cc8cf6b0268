//! Procedural closed meshes: boxes, spheres and extruded profiles.
//!
//! Used as evaluation fixtures and by the mock executor; all outputs are
//! watertight with outward winding.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::math::{self, Vec3};
use crate::mesh::TriMesh;

/// Closed, outward-oriented axis-aligned box as 12 triangles.
pub fn axis_box(min: Vec3, max: Vec3) -> TriMesh {
    let v = |i: usize| -> Vec3 {
        [
            if i & 1 == 0 { min[0] } else { max[0] },
            if i & 2 == 0 { min[1] } else { max[1] },
            if i & 4 == 0 { min[2] } else { max[2] },
        ]
    };
    let vertices: Vec<Vec3> = (0..8).map(v).collect();
    // Quads listed counter-clockwise seen from outside.
    let quads = [
        [0, 2, 3, 1], // z = min
        [4, 5, 7, 6], // z = max
        [0, 1, 5, 4], // y = min
        [2, 6, 7, 3], // y = max
        [0, 4, 6, 2], // x = min
        [1, 3, 7, 5], // x = max
    ];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriMesh::new(vertices, triangles).expect("box indices are valid")
}

/// Geodesic sphere from a subdivided icosahedron. `subdivisions = 3` gives
/// 1280 triangles.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + math::sqrt(5.0)) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(unit)
    .collect();
    let mut faces: Vec<[usize; 3]> = alloc::vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push(unit([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices
        .into_iter()
        .map(|v| [center[0] + radius * v[0], center[1] + radius * v[1], center[2] + radius * v[2]])
        .collect();
    TriMesh::new(vertices, faces).expect("icosphere indices are valid")
}

fn unit(v: Vec3) -> Vec3 {
    let n = math::norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn signed_area_2d(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        p[0] * q[1] - q[0] * p[1]
    }).sum::<f64>() / 2.0
}

fn cross_2d(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn in_triangle_2d(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    cross_2d(a, b, p) >= 0.0 && cross_2d(b, c, p) >= 0.0 && cross_2d(c, a, p) >= 0.0
}

/// Ear-clipping triangulation of a simple counter-clockwise polygon.
fn triangulate_ccw(poly: &[[f64; 2]]) -> Vec<[usize; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    while idx.len() > 3 {
        let n = idx.len();
        let ear = (0..n).find(|&i| {
            let (a, b, c) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            cross_2d(poly[a], poly[b], poly[c]) > 0.0
                && !idx.iter().any(|&j| j != a && j != b && j != c && in_triangle_2d(poly[j], poly[a], poly[b], poly[c]))
        });
        let i = ear.expect("simple polygon always has an ear");
        out.push([idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]]);
        idx.remove(i);
    }
    if idx.len() == 3 {
        out.push([idx[0], idx[1], idx[2]]);
    }
    out
}

/// Prism from a simple polygon in the xy-plane, extruded from `z0` to `z1`.
///
/// The profile may be given in either winding.
pub fn extrude_polygon(profile: &[[f64; 2]], z0: f64, z1: f64) -> TriMesh {
    assert!(profile.len() >= 3 && z1 > z0, "need a polygon and positive height");
    let mut poly = profile.to_vec();
    if signed_area_2d(&poly) < 0.0 {
        poly.reverse();
    }
    let n = poly.len();
    let mut vertices: Vec<Vec3> = poly.iter().map(|p| [p[0], p[1], z0]).collect();
    vertices.extend(poly.iter().map(|p| [p[0], p[1], z1]));
    let mut triangles = Vec::new();
    for [a, b, c] in triangulate_ccw(&poly) {
        triangles.push([a, c, b]);
        triangles.push([a + n, b + n, c + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, j + n]);
        triangles.push([i, j + n, i + n]);
    }
    TriMesh::new(vertices, triangles).expect("prism indices are valid")
}

/// The L-shaped plate used for rotation-search checks: a 4 x 3 footprint
/// with a 2 x 2 notch removed, extruded to height 1. Not symmetric under
/// any nontrivial rotation about z.
pub fn l_bracket() -> TriMesh {
    extrude_polygon(&[[0.0, 0.0], [4.0, 0.0], [4.0, 1.0], [2.0, 1.0], [2.0, 3.0], [0.0, 3.0]], 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{mesh_connected_components, mesh_is_watertight, mesh_signed_volume};

    #[test]
    fn box_volume_and_closure() {
        let b = axis_box([0.0; 3], [2.0, 3.0, 4.0]);
        assert!(mesh_is_watertight(&b));
        assert!((mesh_signed_volume(&b) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_converges_to_ball_volume() {
        let s = icosphere([0.0; 3], 1.0, 3);
        assert_eq!(s.triangles().len(), 1280);
        assert!(mesh_is_watertight(&s));
        assert_eq!(mesh_connected_components(&s), 1);
        let ball = 4.0 / 3.0 * core::f64::consts::PI;
        let v = mesh_signed_volume(&s);
        assert!(v > 0.0 && (ball - v) / ball < 0.02, "volume {v}");
    }

    #[test]
    fn l_bracket_volume() {
        let l = l_bracket();
        assert!(mesh_is_watertight(&l));
        assert_eq!(mesh_connected_components(&l), 1);
        // 4*3 - 2*2 = 8 footprint, height 1.
        assert!((mesh_signed_volume(&l) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn clockwise_profile_is_reoriented() {
        let sq = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        assert!((mesh_signed_volume(&extrude_polygon(&sq, 0.0, 2.0)) - 2.0).abs() < 1e-12);
    }
}
