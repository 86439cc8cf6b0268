//! Triangle meshes and mesh-level geometric checks.
//!
//! These run on exported STL meshes and are independent of the CAD kernel's
//! own B-Rep topology report. Vertex positions are welded on a 1e-9 lattice
//! before any adjacency is computed, since STL stores every triangle corner
//! separately.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math::{self, cross, dot, norm, sub, Vec3};

/// Triangles with area at or below this are dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Lattice spacing used to weld coincident vertices.
pub const WELD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but mesh has {len} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, len: usize },
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    dropped_degenerate: usize,
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl TriMesh {
    /// Validates indices and drops zero-area triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, len: vertices.len() });
            }
        }
        let before = triangles.len();
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|&[a, b, c]| triangle_area(vertices[a], vertices[b], vertices[c]) > DEGENERATE_AREA)
            .collect();
        let dropped_degenerate = before - triangles.len();
        Ok(Self { vertices, triangles, dropped_degenerate })
    }

    /// Builds an indexed mesh from a triangle soup (one corner triple per facet).
    pub fn from_soup(facets: &[[Vec3; 3]]) -> Result<Self, MeshError> {
        let mut vertices = Vec::with_capacity(facets.len() * 3);
        let mut triangles = Vec::with_capacity(facets.len());
        for f in facets {
            let base = vertices.len();
            vertices.extend_from_slice(f);
            triangles.push([base, base + 1, base + 2]);
        }
        Self::new(vertices, triangles)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
            dropped_degenerate: self.dropped_degenerate,
        }
    }

    /// Same geometry with every triangle's winding reversed.
    pub fn inverted(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            dropped_degenerate: self.dropped_degenerate,
        }
    }

    /// Concatenates two meshes without welding.
    pub fn merged(&self, other: &TriMesh) -> Self {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|&[a, b, c]| [a + off, b + off, c + off]));
        Self { vertices, triangles, dropped_degenerate: self.dropped_degenerate + other.dropped_degenerate }
    }

    /// Axis-aligned bounds as `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut used = self.triangles.iter().flatten().map(|&i| self.vertices[i]);
        let first = used.next()?;
        Some(used.fold((first, first), |(mut lo, mut hi), v| {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
            (lo, hi)
        }))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| {
            let [a, b, c] = self.triangle(t);
            triangle_area(a, b, c)
        }).sum()
    }

    /// Canonical vertex id per original vertex after lattice welding.
    fn welded_ids(&self) -> Vec<usize> {
        let mut lattice: BTreeMap<[i64; 3], usize> = BTreeMap::new();
        self.vertices
            .iter()
            .map(|v| {
                let key = [0, 1, 2].map(|k| math::round(v[k] / WELD_TOLERANCE) as i64);
                let next = lattice.len();
                *lattice.entry(key).or_insert(next)
            })
            .collect()
    }

    /// Undirected welded edge -> triangles using it.
    fn edge_incidence(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let ids = self.welded_ids();
        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            let w = tri.map(|i| ids[i]);
            for (a, b) in [(w[0], w[1]), (w[1], w[2]), (w[2], w[0])] {
                edges.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        edges
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: alloc::vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            core::cmp::Ordering::Less => self.parent[ra] = rb,
            core::cmp::Ordering::Greater => self.parent[rb] = ra,
            core::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Number of connected components under triangle adjacency through shared
/// edges. Triangles touching only at a vertex are not connected.
pub fn mesh_connected_components(mesh: &TriMesh) -> usize {
    if mesh.is_empty() {
        return 0;
    }
    let mut uf = UnionFind::new(mesh.triangles.len());
    for tris in mesh.edge_incidence().values() {
        for w in tris.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut roots: Vec<usize> = (0..mesh.triangles.len()).map(|t| uf.find(t)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

/// True iff every undirected edge is shared by exactly two triangles.
pub fn mesh_is_watertight(mesh: &TriMesh) -> bool {
    !mesh.is_empty() && mesh.edge_incidence().values().all(|t| t.len() == 2)
}

/// Signed volume by the divergence theorem, `sum det(v0, v1, v2) / 6`.
///
/// Positive for closed, outward-oriented surfaces. Meaningless (but still
/// computed) for open meshes; see [`volume_report`].
pub fn mesh_signed_volume(mesh: &TriMesh) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.triangle(t);
            dot(a, cross(b, c))
        })
        .sum::<f64>()
        / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeReport {
    pub volume: f64,
    /// The mesh is not watertight, so the value is only an approximation.
    pub approximate: bool,
}

pub fn volume_report(mesh: &TriMesh) -> VolumeReport {
    VolumeReport { volume: mesh_signed_volume(mesh), approximate: !mesh_is_watertight(mesh) }
}

/// Summary of all mesh-level checks at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSummary {
    pub triangles: usize,
    pub components: usize,
    pub watertight: bool,
    pub signed_volume: f64,
    pub dropped_degenerate: usize,
}

pub fn summarize(mesh: &TriMesh) -> MeshSummary {
    MeshSummary {
        triangles: mesh.triangles.len(),
        components: mesh_connected_components(mesh),
        watertight: mesh_is_watertight(mesh),
        signed_volume: mesh_signed_volume(mesh),
        dropped_degenerate: mesh.dropped_degenerate,
    }
}
