//! STL reading and writing (binary and ASCII).

use std::path::Path;

use cadsynth_core::math::Vec3;
use cadsynth_core::mesh::{MeshError, TriMesh};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StlError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("binary STL truncated: header says {declared} facets, file holds {available}")]
    Truncated { declared: u32, available: usize },
    #[error("ASCII STL line {line}: {message}")]
    Ascii { line: usize, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub fn read_stl(path: &Path) -> Result<TriMesh, StlError> {
    parse_stl(&std::fs::read(path)?)
}

/// Parses either flavor. A buffer starting with `solid` whose size matches
/// the binary layout exactly is treated as binary (some exporters write
/// `solid` into the binary header).
pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh, StlError> {
    let binary_fits = bytes.len() >= 84 && {
        let n = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
        bytes.len() == 84 + 50 * n
    };
    let facets = if bytes.trim_ascii_start().starts_with(b"solid") && !binary_fits {
        parse_ascii(bytes)?
    } else {
        parse_binary(bytes)?
    };
    Ok(TriMesh::from_soup(&facets)?)
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>, StlError> {
    if bytes.len() < 84 {
        return Err(StlError::Truncated { declared: 0, available: 0 });
    }
    let declared = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes"));
    let available = (bytes.len() - 84) / 50;
    if available < declared as usize {
        return Err(StlError::Truncated { declared, available });
    }
    let f = |b: &[u8], i: usize| f32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64;
    Ok(bytes[84..]
        .chunks_exact(50)
        .take(declared as usize)
        .map(|rec| {
            // Skip the 12-byte normal; winding carries orientation.
            let v = |k: usize| [f(rec, 3 + 3 * k), f(rec, 4 + 3 * k), f(rec, 5 + 3 * k)];
            [v(0), v(1), v(2)]
        })
        .collect())
}

fn parse_ascii(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>, StlError> {
    let text = String::from_utf8_lossy(bytes);
    let mut facets = Vec::new();
    let mut current: Vec<Vec3> = Vec::with_capacity(3);
    for (i, line) in text.lines().enumerate() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("vertex") => {
                let coords: Vec<f64> = words
                    .map(|w| w.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| StlError::Ascii { line: i + 1, message: e.to_string() })?;
                if coords.len() != 3 {
                    return Err(StlError::Ascii { line: i + 1, message: "vertex needs 3 coordinates".into() });
                }
                current.push([coords[0], coords[1], coords[2]]);
            }
            Some("endloop") => {
                if current.len() != 3 {
                    return Err(StlError::Ascii { line: i + 1, message: format!("facet has {} vertices", current.len()) });
                }
                facets.push([current[0], current[1], current[2]]);
                current.clear();
            }
            _ => {}
        }
    }
    Ok(facets)
}

pub fn to_binary_stl(mesh: &TriMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out[..13].copy_from_slice(b"cadsynth mesh");
    out.extend_from_slice(&(mesh.triangles().len() as u32).to_le_bytes());
    for t in 0..mesh.triangles().len() {
        let tri = mesh.triangle(t);
        let n = cadsynth_core::math::cross(cadsynth_core::math::sub(tri[1], tri[0]), cadsynth_core::math::sub(tri[2], tri[0]));
        let len = cadsynth_core::math::norm(n);
        let n = if len > 0.0 { [n[0] / len, n[1] / len, n[2] / len] } else { [0.0; 3] };
        for c in n.iter().chain(tri.iter().flatten()) {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

pub fn to_ascii_stl(mesh: &TriMesh) -> String {
    let mut s = String::from("solid cadsynth\n");
    for t in 0..mesh.triangles().len() {
        s.push_str("  facet normal 0 0 0\n    outer loop\n");
        for v in mesh.triangle(t) {
            s.push_str(&format!("      vertex {} {} {}\n", v[0], v[1], v[2]));
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    s.push_str("endsolid cadsynth\n");
    s
}

pub fn write_stl(path: &Path, mesh: &TriMesh) -> std::io::Result<()> {
    std::fs::write(path, to_binary_stl(mesh))
}
