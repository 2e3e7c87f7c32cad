//! Triangle meshes and OBJ export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    /// Vertex positions in mm.
    pub vertices: Vec<[f64; 3]>,
    /// Vertex-index triples, 0-based.
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references vertex beyond count {}",
                    vertices.len()
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} is degenerate: {f:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    /// V - E + F with edges counted once per undirected pair.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// True when every edge borders exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut counts = std::collections::HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }
}

/// Writes an ASCII OBJ-style listing: `v x y z` lines then `f a b c` lines
/// with 1-based indices.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut text = String::new();
    for v in &mesh.vertices {
        text.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        text.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it.filter_map(|t| t.parse().ok()).collect();
                if coords.len() != 3 {
                    return Err(Error::parse(path, format!("line {}: bad vertex", lineno + 1)));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .filter_map(|t| t.split('/').next().and_then(|s| s.parse().ok()))
                    .collect();
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(Error::parse(path, format!("line {}: bad face", lineno + 1)));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_is_closed_with_euler_two() {
        let m = tetrahedron();
        assert!(m.is_closed());
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn degenerate_face_rejected() {
        let r = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0, 1, 1]]);
        assert!(r.is_err());
    }

    #[test]
    fn face_index_out_of_range_rejected() {
        let r = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0, 1, 2]]);
        assert!(r.is_err());
    }

    #[test]
    fn obj_round_trip() {
        let m = tetrahedron();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        save_mesh(&m, &path).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(loaded.faces, m.faces);
        assert_eq!(loaded.vertices, m.vertices);
    }
}
