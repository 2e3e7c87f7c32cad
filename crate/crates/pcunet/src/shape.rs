//! Mask -> mesh -> dense cloud -> sparse cloud pipeline.
//!
//! Isosurfaces are extracted with marching cubes at level 0.5 on the binary
//! field (vertices land on voxel-edge midpoints, positioned in world mm).
//! The grid is conceptually padded with one background layer so foreground
//! touching the volume border still yields a closed surface.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::volume::MaskVolume;

mod mc_table;

/// Cube corner offsets in marching-cubes order.
const CORNER: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Edge endpoints as corner-index pairs.
const EDGE: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Active edges of a marching-cubes case: edges whose corners straddle the
/// isosurface.
#[cfg(test)]
pub(crate) fn active_edges(case: u8) -> u16 {
    let inside = |c: usize| (case >> c) & 1 == 1;
    let mut bits = 0u16;
    for (e, ends) in EDGE.iter().enumerate() {
        if inside(ends[0]) != inside(ends[1]) {
            bits |= 1 << e;
        }
    }
    bits
}

/// Extracts the 0.5-level isosurface of a binary mask as a triangle mesh with
/// vertices in world mm coordinates.
pub fn mask_to_mesh(mask: &MaskVolume, iso_level: f64) -> Result<TriangleMesh> {
    let fg = mask.foreground_count();
    let total = mask.data.len();
    if fg == 0 || fg == total {
        return Err(Error::NoIsosurface);
    }
    let (nx, ny, nz) = mask.shape();
    let value = |x: i64, y: i64, z: i64| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            0.0
        } else {
            mask.data[(x as usize, y as usize, z as usize)] as f64
        }
    };

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // Shared vertices are keyed by the global grid edge: lower corner + axis.
    let mut edge_vertex: HashMap<(i64, i64, i64, u8), usize> = HashMap::new();

    let to_world = |p: [f64; 3]| {
        [
            mask.origin[0] + p[0] * mask.spacing[0],
            mask.origin[1] + p[1] * mask.spacing[1],
            mask.origin[2] + p[2] * mask.spacing[2],
        ]
    };

    for cx in -1..nx as i64 {
        for cy in -1..ny as i64 {
            for cz in -1..nz as i64 {
                let mut case = 0u8;
                let mut vals = [0.0f64; 8];
                for (c, off) in CORNER.iter().enumerate() {
                    vals[c] = value(cx + off[0], cy + off[1], cz + off[2]);
                    if vals[c] > iso_level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let tri = &mc_table::TRI_TABLE[case as usize];
                let mut edge_ids = [usize::MAX; 12];
                let mut ensure_vertex = |e: usize| -> usize {
                    if edge_ids[e] != usize::MAX {
                        return edge_ids[e];
                    }
                    let [a, b] = EDGE[e];
                    let pa = CORNER[a];
                    let pb = CORNER[b];
                    // global edge key: lower endpoint and axis
                    let ga = [cx + pa[0], cy + pa[1], cz + pa[2]];
                    let gb = [cx + pb[0], cy + pb[1], cz + pb[2]];
                    let (lo, axis) = if ga <= gb {
                        (ga, axis_of(pa, pb))
                    } else {
                        (gb, axis_of(pa, pb))
                    };
                    let key = (lo[0], lo[1], lo[2], axis);
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let t = if (vals[b] - vals[a]).abs() < 1e-12 {
                            0.5
                        } else {
                            (iso_level - vals[a]) / (vals[b] - vals[a])
                        };
                        let p = [
                            ga[0] as f64 + t * (gb[0] - ga[0]) as f64,
                            ga[1] as f64 + t * (gb[1] - ga[1]) as f64,
                            ga[2] as f64 + t * (gb[2] - ga[2]) as f64,
                        ];
                        vertices.push(to_world(p));
                        vertices.len() - 1
                    });
                    edge_ids[e] = id;
                    id
                };
                let mut i = 0;
                while tri[i] >= 0 {
                    let v0 = ensure_vertex(tri[i] as usize);
                    let v1 = ensure_vertex(tri[i + 1] as usize);
                    let v2 = ensure_vertex(tri[i + 2] as usize);
                    if v0 != v1 && v1 != v2 && v0 != v2 {
                        faces.push([v0, v1, v2]);
                    }
                    i += 3;
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn axis_of(a: [i64; 3], b: [i64; 3]) -> u8 {
    for k in 0..3 {
        if a[k] != b[k] {
            return k as u8;
        }
    }
    unreachable!("degenerate edge")
}

/// The mesh vertex list, order preserved.
pub fn mesh_to_dense_cloud(mesh: &TriangleMesh) -> Result<PointCloud> {
    PointCloud::new(mesh.vertices.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    FarthestPoint,
    Random,
}

/// Selects exactly `n` points of the input cloud. Farthest-point sampling
/// starts from a seeded random point and greedily adds the point with maximum
/// distance to the selected set (ties to the lowest index); `Random` is a
/// seeded uniform draw without replacement.
pub fn downsample_cloud(
    cloud: &PointCloud,
    n: usize,
    method: DownsampleMethod,
    seed: u64,
) -> Result<PointCloud> {
    if cloud.len() < n {
        return Err(Error::CloudTooSmall {
            have: cloud.len(),
            want: n,
        });
    }
    if n == 0 {
        return Err(Error::InvalidCloud("cannot downsample to 0 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = match method {
        DownsampleMethod::FarthestPoint => {
            farthest_point_indices(&cloud.points, n, rng.gen_range(0..cloud.len()))
        }
        DownsampleMethod::Random => {
            let mut idx: Vec<usize> = (0..cloud.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx
        }
    };
    let points = indices.iter().map(|&i| cloud.points[i]).collect();
    let mut out = PointCloud::new(points)?;
    out.centered = cloud.centered;
    Ok(out)
}

/// Greedy farthest-point selection; exposed so oracles can compare against
/// an independent implementation with the same start index and tie rule.
pub fn farthest_point_indices(points: &[[f64; 3]], n: usize, start: usize) -> Vec<usize> {
    let mut selected = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start;
    selected.push(current);
    for _ in 1..n {
        let p = points[current];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, q) in points.iter().enumerate() {
            let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.1 {
                best = (i, min_d2[i]);
            }
        }
        current = best.0;
        selected.push(current);
    }
    selected
}

/// Marks the nearest voxel of each point; visualization helper for the
/// reverse direction of the pipeline.
pub fn rasterize_cloud(
    cloud: &PointCloud,
    shape: (usize, usize, usize),
    spacing: [f64; 3],
    origin: [f64; 3],
) -> Result<MaskVolume> {
    let mut data = ndarray::Array3::zeros(shape);
    for p in &cloud.points {
        let xi = ((p[0] - origin[0]) / spacing[0]).round();
        let yi = ((p[1] - origin[1]) / spacing[1]).round();
        let zi = ((p[2] - origin[2]) / spacing[2]).round();
        if xi >= 0.0
            && yi >= 0.0
            && zi >= 0.0
            && (xi as usize) < shape.0
            && (yi as usize) < shape.1
            && (zi as usize) < shape.2
        {
            data[(xi as usize, yi as usize, zi as usize)] = 1;
        }
    }
    MaskVolume::new(data, spacing, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ball_mask(shape: (usize, usize, usize), center: [f64; 3], r: f64) -> MaskVolume {
        let data = Array3::from_shape_fn(shape, |(x, y, z)| {
            let dx = x as f64 - center[0];
            let dy = y as f64 - center[1];
            let dz = z as f64 - center[2];
            u8::from(dx * dx + dy * dy + dz * dz <= r * r)
        });
        MaskVolume::new(data, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn tri_table_edges_match_active_edges() {
        // Every triangle edge index listed for a case must be an edge the
        // case actually crosses, and vice versa.
        for case in 0u16..256 {
            let expect = active_edges(case as u8);
            let mut seen = 0u16;
            let row = &mc_table::TRI_TABLE[case as usize];
            let mut i = 0;
            while row[i] >= 0 {
                seen |= 1 << row[i];
                i += 1;
            }
            assert_eq!(i % 3, 0, "case {case}: triangle list length");
            assert_eq!(seen, expect, "case {case}: edge set mismatch");
        }
    }

    #[test]
    fn ball_vertices_near_radius() {
        let mask = ball_mask((32, 32, 32), [16.0, 16.0, 16.0], 10.0);
        let mesh = mask_to_mesh(&mask, 0.5).unwrap();
        assert!(!mesh.vertices.is_empty());
        for v in &mesh.vertices {
            let d = ((v[0] - 16.0).powi(2) + (v[1] - 16.0).powi(2) + (v[2] - 16.0).powi(2)).sqrt();
            assert!((9.0..=11.0).contains(&d), "vertex at distance {d}");
        }
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn small_cube_closed_euler_two() {
        let mut data = Array3::zeros((6, 6, 6));
        for x in 2..4 {
            for y in 2..4 {
                for z in 2..4 {
                    data[(x, y, z)] = 1;
                }
            }
        }
        let mask = MaskVolume::new(data, [1.0; 3], [0.0; 3]).unwrap();
        let mesh = mask_to_mesh(&mask, 0.5).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn foreground_on_border_still_closed() {
        let mut data = Array3::zeros((4, 4, 4));
        data[(0, 0, 0)] = 1;
        let mask = MaskVolume::new(data, [1.0; 3], [0.0; 3]).unwrap();
        let mesh = mask_to_mesh(&mask, 0.5).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn empty_and_full_masks_error() {
        let empty = MaskVolume::new(Array3::zeros((4, 4, 4)), [1.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(mask_to_mesh(&empty, 0.5), Err(Error::NoIsosurface)));
        let full = MaskVolume::new(Array3::ones((4, 4, 4)), [1.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(mask_to_mesh(&full, 0.5), Err(Error::NoIsosurface)));
    }

    #[test]
    fn vertices_in_surface_band() {
        // Vertices lie within one voxel of both the foreground and background.
        let mask = ball_mask((24, 24, 24), [12.0, 12.0, 12.0], 7.0);
        let mesh = mask_to_mesh(&mask, 0.5).unwrap();
        for v in &mesh.vertices {
            let r = ((v[0] - 12.0).powi(2) + (v[1] - 12.0).powi(2) + (v[2] - 12.0).powi(2)).sqrt();
            assert!(r > 7.0 - 1.5 && r < 7.0 + 1.5, "vertex off the surface band: r={r}");
        }
    }

    #[test]
    fn dense_cloud_is_vertex_list() {
        let mask = ball_mask((16, 16, 16), [8.0, 8.0, 8.0], 5.0);
        let mesh = mask_to_mesh(&mask, 0.5).unwrap();
        let cloud = mesh_to_dense_cloud(&mesh).unwrap();
        assert_eq!(cloud.points, mesh.vertices);
    }

    #[test]
    fn fps_cube_corners() {
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    (i & 1) as f64 * 10.0,
                    ((i >> 1) & 1) as f64 * 10.0,
                    ((i >> 2) & 1) as f64 * 10.0,
                ]
            })
            .collect();
        let cloud = PointCloud::new(corners.clone()).unwrap();
        let out = downsample_cloud(&cloud, 8, DownsampleMethod::FarthestPoint, 0).unwrap();
        let mut got = out.points.clone();
        let mut want = corners;
        let key = |p: &[f64; 3]| (p[0] as i64, p[1] as i64, p[2] as i64);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }

    #[test]
    fn downsample_subset_and_determinism() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let points: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.gen_range(-9.0..9.0),
                    rng.gen_range(-9.0..9.0),
                    rng.gen_range(-9.0..9.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new(points.clone()).unwrap();
        for method in [DownsampleMethod::FarthestPoint, DownsampleMethod::Random] {
            let a = downsample_cloud(&cloud, 50, method, 11).unwrap();
            let b = downsample_cloud(&cloud, 50, method, 11).unwrap();
            assert_eq!(a.points, b.points, "determinism for {method:?}");
            for p in &a.points {
                assert!(points.contains(p), "subset property for {method:?}");
            }
        }
    }

    #[test]
    fn downsample_full_size_is_permutation() {
        let points = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
        let cloud = PointCloud::new(points.clone()).unwrap();
        let out = downsample_cloud(&cloud, 4, DownsampleMethod::FarthestPoint, 3).unwrap();
        let mut got = out.points;
        let mut want = points;
        let key = |p: &[f64; 3]| (p[2] as i64, p[1] as i64, p[0] as i64);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }

    #[test]
    fn downsample_too_small_errors() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 5]).unwrap();
        let err = downsample_cloud(&cloud, 10, DownsampleMethod::Random, 0).unwrap_err();
        assert!(err.to_string().contains("refine"), "{err}");
    }
}
