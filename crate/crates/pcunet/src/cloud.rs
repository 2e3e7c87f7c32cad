//! Point clouds in millimeter coordinates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered list of 3D points in mm. `centered` records whether the centroid
/// has been subtracted (within 1e-6 mm per axis).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub centered: bool,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCloud("cloud must contain >= 1 point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        Ok(Self {
            points,
            centered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// Subtracts the centroid; returns the centered cloud and the removed centroid
/// so callers can invert the shift.
pub fn center_cloud(cloud: &PointCloud) -> (PointCloud, [f64; 3]) {
    let c = cloud.centroid();
    let points = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    (
        PointCloud {
            points,
            centered: true,
        },
        c,
    )
}

const BINARY_MAGIC: &[u8; 4] = b"PCU1";

/// Saves a cloud: `.xyz` as "x y z" text lines, `.pcb` as little-endian
/// float32 N x 3 with a 16-byte header (magic "PCU1", u32 N, 2 reserved u32).
pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => {
            let mut text = String::with_capacity(cloud.len() * 24);
            for p in &cloud.points {
                text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        Some("pcb") => {
            let mut bytes = Vec::with_capacity(16 + cloud.len() * 12);
            bytes.extend_from_slice(BINARY_MAGIC);
            bytes.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
            bytes.extend_from_slice(&[0u8; 8]);
            for p in &cloud.points {
                for &c in p {
                    bytes.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        other => Err(Error::parse(
            path,
            format!("unsupported cloud format {other:?}; expected .xyz or .pcb"),
        )),
    }
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut points = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let coords: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            Error::parse(path, format!("line {}: bad number {t:?}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {}: expected 3 coordinates", lineno + 1),
                    ));
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(
                        path,
                        format!("line {}: non-finite coordinate", lineno + 1),
                    ));
                }
                points.push([coords[0], coords[1], coords[2]]);
            }
            if points.is_empty() {
                return Err(Error::parse(path, "cloud must contain >= 1 point"));
            }
            PointCloud::new(points)
        }
        Some("pcb") => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
                return Err(Error::parse(path, "missing PCU1 magic"));
            }
            let n = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
            if n == 0 {
                return Err(Error::parse(path, "cloud must contain >= 1 point"));
            }
            if bytes.len() != 16 + n * 12 {
                return Err(Error::parse(
                    path,
                    format!("expected {} data bytes, found {}", n * 12, bytes.len() - 16),
                ));
            }
            let mut points = Vec::with_capacity(n);
            for i in 0..n {
                let at = 16 + i * 12;
                let mut p = [0.0f64; 3];
                for (k, pk) in p.iter_mut().enumerate() {
                    let o = at + k * 4;
                    let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
                    if !v.is_finite() {
                        return Err(Error::parse(path, format!("point {i}: non-finite coordinate")));
                    }
                    *pk = v as f64;
                }
                points.push(p);
            }
            PointCloud::new(points)
        }
        other => Err(Error::parse(
            path,
            format!("unsupported cloud format {other:?}; expected .xyz or .pcb"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_text_preserves_order() {
        let cloud = PointCloud::new(vec![[1.5, -2.0, 3.25], [0.0, 0.0, 0.0], [9.0, 8.0, 7.0]])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        save_cloud(&cloud, &path).unwrap();
        let loaded = load_cloud(&path).unwrap();
        assert_eq!(loaded.points, cloud.points);
    }

    #[test]
    fn round_trip_binary() {
        let cloud = PointCloud::new(vec![[1.5, -2.0, 3.25], [4.0, 5.0, 6.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcb");
        save_cloud(&cloud, &path).unwrap();
        assert_eq!(load_cloud(&path).unwrap().points, cloud.points);
    }

    #[test]
    fn empty_cloud_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        std::fs::write(&path, "").unwrap();
        let err = load_cloud(&path).unwrap_err();
        assert!(err.to_string().contains(">= 1 point"), "{err}");
    }

    #[test]
    fn nan_coordinate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.xyz");
        std::fs::write(&path, "0 0 NaN\n").unwrap();
        assert!(load_cloud(&path).is_err());
    }

    #[test]
    fn center_single_point() {
        let cloud = PointCloud::new(vec![[3.0, 4.0, 5.0]]).unwrap();
        let (centered, centroid) = center_cloud(&cloud);
        assert_eq!(centered.points, vec![[0.0, 0.0, 0.0]]);
        assert_eq!(centroid, [3.0, 4.0, 5.0]);
        assert!(centered.centered);
    }

    #[test]
    fn center_is_idempotent() {
        let cloud =
            PointCloud::new(vec![[1.0, 2.0, 3.0], [-5.0, 0.0, 2.0], [4.0, 4.0, 4.0]]).unwrap();
        let (once, _) = center_cloud(&cloud);
        let (twice, c2) = center_cloud(&once);
        for (a, b) in once.points.iter().zip(&twice.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        for v in &c2 {
            assert!(v.abs() < 1e-6, "already centered");
        }
    }
}
