//! Dense volumetric grids and their on-disk containers.
//!
//! Arrays are indexed `(x, y, z)` with `z` fastest-varying. World coordinates
//! are millimeters; the voxel-to-world map is axis-aligned scaling plus
//! translation only. Two containers are supported:
//!
//! * MetaImage (`.mha`, uncompressed, `ElementDataFile = LOCAL`) — the
//!   standard medical-image container chosen for this project;
//! * raw little-endian array (`.raw`) with a JSON sidecar
//!   `{shape, spacing, origin, dtype}` as a portable fallback.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued intensity grid with spacing/origin metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub data: Array3<f32>,
    /// mm per voxel along (x, y, z); strictly positive.
    pub spacing: [f64; 3],
    /// world position of voxel (0, 0, 0) in mm.
    pub origin: [f64; 3],
}

/// Binary grid aligned to a [`VoxelVolume`]. Voxels are strictly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    pub data: Array3<u8>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

impl VoxelVolume {
    pub fn new(data: Array3<f32>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite voxel value".into()));
        }
        Ok(Self {
            data,
            spacing,
            origin,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.data.dim();
        (d.0, d.1, d.2)
    }
}

impl MaskVolume {
    pub fn new(data: Array3<u8>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidVolume(
                "mask voxels must be 0 or 1".into(),
            ));
        }
        Ok(Self {
            data,
            spacing,
            origin,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.data.dim();
        (d.0, d.1, d.2)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Checks that a mask shares the grid of its paired image.
    pub fn check_aligned(&self, image: &VoxelVolume) -> Result<()> {
        if self.shape() != image.shape()
            || self.spacing != image.spacing
            || self.origin != image.origin
        {
            return Err(Error::ShapeMismatch(format!(
                "mask grid {:?}/{:?}/{:?} does not match image grid {:?}/{:?}/{:?}",
                self.shape(),
                self.spacing,
                self.origin,
                image.shape(),
                image.spacing,
                image.origin
            )));
        }
        Ok(())
    }
}

/// Grid metadata shared by images and masks.
pub trait GridMeta {
    fn grid_shape(&self) -> (usize, usize, usize);
    fn grid_spacing(&self) -> [f64; 3];
    fn grid_origin(&self) -> [f64; 3];
}

impl GridMeta for VoxelVolume {
    fn grid_shape(&self) -> (usize, usize, usize) {
        self.shape()
    }
    fn grid_spacing(&self) -> [f64; 3] {
        self.spacing
    }
    fn grid_origin(&self) -> [f64; 3] {
        self.origin
    }
}

impl GridMeta for MaskVolume {
    fn grid_shape(&self) -> (usize, usize, usize) {
        self.shape()
    }
    fn grid_spacing(&self) -> [f64; 3] {
        self.spacing
    }
    fn grid_origin(&self) -> [f64; 3] {
        self.origin
    }
}

/// World position of a voxel index: `origin + index * spacing`, componentwise.
pub fn voxel_to_world<V: GridMeta>(index: (usize, usize, usize), volume: &V) -> Result<[f64; 3]> {
    let shape = volume.grid_shape();
    if index.0 >= shape.0 || index.1 >= shape.1 || index.2 >= shape.2 {
        return Err(Error::OutOfBounds {
            index,
            shape,
        });
    }
    let spacing = volume.grid_spacing();
    let origin = volume.grid_origin();
    Ok([
        origin[0] + index.0 as f64 * spacing[0],
        origin[1] + index.1 as f64 * spacing[1],
        origin[2] + index.2 as f64 * spacing[2],
    ])
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    shape: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
}

enum Container {
    MetaImage,
    Raw,
}

fn container_for(path: &Path) -> Result<Container> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("mha") => Ok(Container::MetaImage),
        Some("raw") => Ok(Container::Raw),
        other => Err(Error::parse(
            path,
            format!("unsupported volume container {other:?}; expected .mha or .raw"),
        )),
    }
}

pub fn save_volume(volume: &VoxelVolume, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = volume
        .data
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    save_container(
        path,
        volume.shape(),
        volume.spacing,
        volume.origin,
        "float32",
        &bytes,
    )
}

pub fn save_mask(mask: &MaskVolume, path: &Path) -> Result<()> {
    // Invariant checked before any byte hits disk.
    if mask.data.iter().any(|&v| v > 1) {
        return Err(Error::InvalidVolume("mask voxels must be 0 or 1".into()));
    }
    let bytes: Vec<u8> = mask.data.iter().copied().collect();
    save_container(path, mask.shape(), mask.spacing, mask.origin, "uint8", &bytes)
}

pub fn load_volume(path: &Path) -> Result<VoxelVolume> {
    let (shape, spacing, origin, dtype, bytes) = load_container(path)?;
    if dtype != "float32" {
        return Err(Error::parse(
            path,
            format!("dtype: expected float32 for an intensity volume, got {dtype}"),
        ));
    }
    let n = shape[0] * shape[1] * shape[2];
    if bytes.len() != n * 4 {
        return Err(Error::parse(
            path,
            format!("data length {} does not match shape {shape:?}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    VoxelVolume::new(data, spacing, origin)
}

pub fn load_mask(path: &Path) -> Result<MaskVolume> {
    let (shape, spacing, origin, dtype, bytes) = load_container(path)?;
    if dtype != "uint8" {
        return Err(Error::parse(
            path,
            format!("dtype: expected uint8 for a mask, got {dtype}"),
        ));
    }
    let n = shape[0] * shape[1] * shape[2];
    if bytes.len() != n {
        return Err(Error::parse(
            path,
            format!("data length {} does not match shape {shape:?}", bytes.len()),
        ));
    }
    let data = Array3::from_shape_vec((shape[0], shape[1], shape[2]), bytes)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    MaskVolume::new(data, spacing, origin)
}

fn save_container(
    path: &Path,
    shape: (usize, usize, usize),
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: &str,
    bytes: &[u8],
) -> Result<()> {
    match container_for(path)? {
        Container::MetaImage => {
            let element_type = match dtype {
                "float32" => "MET_FLOAT",
                "uint8" => "MET_UCHAR",
                _ => unreachable!(),
            };
            let header = format!(
                "ObjectType = Image\n\
                 NDims = 3\n\
                 BinaryData = True\n\
                 BinaryDataByteOrderMSB = False\n\
                 DimSize = {} {} {}\n\
                 ElementSpacing = {} {} {}\n\
                 Offset = {} {} {}\n\
                 ElementType = {}\n\
                 ElementDataFile = LOCAL\n",
                shape.0,
                shape.1,
                shape.2,
                spacing[0],
                spacing[1],
                spacing[2],
                origin[0],
                origin[1],
                origin[2],
                element_type
            );
            // MetaImage stores x fastest; this crate stores z fastest.
            let elem = if dtype == "float32" { 4 } else { 1 };
            let (nx, ny, nz) = shape;
            let mut reordered = vec![0u8; bytes.len()];
            for x in 0..nx {
                for y in 0..ny {
                    for z in 0..nz {
                        let src = ((x * ny + y) * nz + z) * elem;
                        let dst = ((z * ny + y) * nx + x) * elem;
                        reordered[dst..dst + elem].copy_from_slice(&bytes[src..src + elem]);
                    }
                }
            }
            let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(header.as_bytes())
                .and_then(|_| f.write_all(&reordered))
                .map_err(|e| Error::io(path, e))
        }
        Container::Raw => {
            let sidecar = RawSidecar {
                shape: [shape.0, shape.1, shape.2],
                spacing,
                origin,
                dtype: dtype.to_string(),
            };
            let json_path = sidecar_path(path);
            fs::write(
                &json_path,
                serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
            )
            .map_err(|e| Error::io(&json_path, e))?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

#[allow(clippy::type_complexity)]
fn load_container(path: &Path) -> Result<([usize; 3], [f64; 3], [f64; 3], String, Vec<u8>)> {
    match container_for(path)? {
        Container::MetaImage => load_mha(path),
        Container::Raw => {
            let json_path = sidecar_path(path);
            let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
            let sidecar: RawSidecar = serde_json::from_str(&text)
                .map_err(|e| Error::parse(&json_path, e.to_string()))?;
            check_spacing(sidecar.spacing)
                .map_err(|_| Error::parse(&json_path, format!("spacing: must be positive, got {:?}", sidecar.spacing)))?;
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok((sidecar.shape, sidecar.spacing, sidecar.origin, sidecar.dtype, bytes))
        }
    }
}

#[allow(clippy::type_complexity)]
fn load_mha(path: &Path) -> Result<([usize; 3], [f64; 3], [f64; 3], String, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Header is ASCII lines terminated by the ElementDataFile key.
    let mut offset = 0usize;
    let mut shape = None;
    let mut spacing = None;
    let mut origin = [0.0f64; 3];
    let mut element_type = None;
    loop {
        let rest = &raw[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, "header not terminated"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::parse(path, "non-ASCII header line"))?;
        offset += nl + 1;
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, format!("malformed header line {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "DimSize" => shape = Some(parse_triple::<usize>(path, key, value)?),
            "ElementSpacing" => spacing = Some(parse_triple::<f64>(path, key, value)?),
            "Offset" | "Origin" => origin = parse_triple::<f64>(path, key, value)?,
            "ElementType" => element_type = Some(value.to_string()),
            "BinaryDataByteOrderMSB" if value == "True" => {
                return Err(Error::parse(path, "BinaryDataByteOrderMSB: big-endian data unsupported"));
            }
            "TransformMatrix" => {
                let m: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse().unwrap_or(f64::NAN))
                    .collect();
                let identity = [1., 0., 0., 0., 1., 0., 0., 0., 1.];
                if m.len() != 9 || m.iter().zip(identity).any(|(a, b)| (a - b).abs() > 1e-12) {
                    return Err(Error::parse(
                        path,
                        "TransformMatrix: only axis-aligned (identity) transforms supported",
                    ));
                }
            }
            "ElementDataFile" => {
                if value != "LOCAL" {
                    return Err(Error::parse(path, "ElementDataFile: only LOCAL supported"));
                }
                break;
            }
            _ => {}
        }
    }
    let shape_arr =
        shape.ok_or_else(|| Error::parse(path, "DimSize: missing"))?;
    let spacing = spacing.ok_or_else(|| Error::parse(path, "ElementSpacing: missing"))?;
    check_spacing(spacing)
        .map_err(|_| Error::parse(path, format!("ElementSpacing: must be positive, got {spacing:?}")))?;
    let [sx, sy, sz] = shape_arr;
    let shape = [sx, sy, sz];
    let dtype = match element_type.as_deref() {
        Some("MET_FLOAT") => "float32",
        Some("MET_UCHAR") => "uint8",
        other => {
            return Err(Error::parse(
                path,
                format!("ElementType: unsupported {other:?}"),
            ))
        }
    };
    // MetaImage stores x fastest; this crate stores z fastest. Reorder.
    let elem = if dtype == "float32" { 4 } else { 1 };
    let expected = shape[0] * shape[1] * shape[2] * elem;
    let data = &raw[offset..];
    if data.len() != expected {
        return Err(Error::parse(
            path,
            format!("data length {} does not match DimSize {shape:?}", data.len()),
        ));
    }
    let mut out = vec![0u8; expected];
    let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let src = ((z * ny + y) * nx + x) * elem;
                let dst = ((x * ny + y) * nz + z) * elem;
                out[dst..dst + elem].copy_from_slice(&data[src..src + elem]);
            }
        }
    }
    Ok((shape, spacing, origin, dtype.to_string(), out))
}

fn parse_triple<T: std::str::FromStr + Copy>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if parts.len() != 3 {
        return Err(Error::parse(
            path,
            format!("{key}: expected 3 values, got {value:?}"),
        ));
    }
    Ok([parts[0], parts[1], parts[2]])
}
