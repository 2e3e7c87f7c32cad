//! Preprocessing chain: ROI crop, isotropic resampling, fixed-size resize,
//! intensity normalization, and elastic-deformation augmentation.
//!
//! Order of operations for training data is crop -> resample -> resize ->
//! normalize. Masks stay strictly binary through every step (nearest-neighbor
//! interpolation everywhere a mask is resampled).

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, VoxelVolume};

/// Parameters of the elastic augmentation. Displacements are sampled i.i.d.
/// uniform in `[-max_displacement, +max_displacement]` per axis on a coarse
/// control grid and upsampled trilinearly to voxel resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Control grid spacing in mm.
    pub control_grid_spacing: f64,
    /// Maximum per-axis displacement in mm.
    pub max_displacement: f64,
    pub seed: u64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            control_grid_spacing: 32.0,
            max_displacement: 4.0,
            seed: 0,
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        if self.control_grid_spacing <= 0.0 || !self.control_grid_spacing.is_finite() {
            return Err(Error::Config("control_grid_spacing must be > 0".into()));
        }
        if self.max_displacement < 0.0 {
            return Err(Error::Config("max_displacement must be >= 0".into()));
        }
        Ok(())
    }
}

fn trilinear(data: &Array3<f32>, x: f64, y: f64, z: f64) -> f32 {
    let (nx, ny, nz) = data.dim();
    let cx = x.clamp(0.0, (nx - 1) as f64);
    let cy = y.clamp(0.0, (ny - 1) as f64);
    let cz = z.clamp(0.0, (nz - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let z0 = cz.floor() as usize;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let fz = cz - z0 as f64;
    let mut acc = 0.0f64;
    for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc += w * data[(xi, yi, zi)] as f64;
                }
            }
        }
    }
    acc as f32
}

fn nearest(data: &Array3<u8>, x: f64, y: f64, z: f64) -> u8 {
    let (nx, ny, nz) = data.dim();
    let xi = x.round().clamp(0.0, (nx - 1) as f64) as usize;
    let yi = y.round().clamp(0.0, (ny - 1) as f64) as usize;
    let zi = z.round().clamp(0.0, (nz - 1) as f64) as usize;
    data[(xi, yi, zi)]
}

/// Crops image and mask to the mask's tight bounding box dilated by
/// `margin_mm` per side, clipped to the image extent.
pub fn crop_roi(
    image: &VoxelVolume,
    mask: &MaskVolume,
    margin_mm: f64,
) -> Result<(VoxelVolume, MaskVolume)> {
    mask.check_aligned(image)?;
    let (nx, ny, nz) = mask.shape();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for ((x, y, z), &v) in mask.data.indexed_iter() {
        if v == 1 {
            let idx = [x, y, z];
            for k in 0..3 {
                lo[k] = lo[k].min(idx[k]);
                hi[k] = hi[k].max(idx[k]);
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::EmptyMask);
    }
    let dims = [nx, ny, nz];
    let mut lo_c = [0usize; 3];
    let mut hi_c = [0usize; 3];
    for k in 0..3 {
        let margin_vox = (margin_mm / mask.spacing[k]).round() as i64;
        lo_c[k] = (lo[k] as i64 - margin_vox).max(0) as usize;
        hi_c[k] = ((hi[k] as i64 + margin_vox) as usize).min(dims[k] - 1);
    }
    let slice = ndarray::s![lo_c[0]..=hi_c[0], lo_c[1]..=hi_c[1], lo_c[2]..=hi_c[2]];
    let origin = [
        image.origin[0] + lo_c[0] as f64 * image.spacing[0],
        image.origin[1] + lo_c[1] as f64 * image.spacing[1],
        image.origin[2] + lo_c[2] as f64 * image.spacing[2],
    ];
    let out_img = VoxelVolume::new(image.data.slice(slice).to_owned(), image.spacing, origin)?;
    let out_mask = MaskVolume::new(mask.data.slice(slice).to_owned(), mask.spacing, origin)?;
    Ok((out_img, out_mask))
}

fn resampled_shape(shape: (usize, usize, usize), spacing: [f64; 3], t: f64) -> (usize, usize, usize) {
    let f = |n: usize, s: f64| ((n as f64 * s / t).round() as usize).max(1);
    (f(shape.0, spacing[0]), f(shape.1, spacing[1]), f(shape.2, spacing[2]))
}

/// Resamples an intensity volume to isotropic `target_spacing_mm` with
/// trilinear interpolation.
pub fn resample_isotropic(volume: &VoxelVolume, target_spacing_mm: f64) -> Result<VoxelVolume> {
    if target_spacing_mm <= 0.0 || !target_spacing_mm.is_finite() {
        return Err(Error::Config("target spacing must be > 0".into()));
    }
    let t = target_spacing_mm;
    let out_shape = resampled_shape(volume.shape(), volume.spacing, t);
    let data = Array3::from_shape_fn(out_shape, |(x, y, z)| {
        trilinear(
            &volume.data,
            x as f64 * t / volume.spacing[0],
            y as f64 * t / volume.spacing[1],
            z as f64 * t / volume.spacing[2],
        )
    });
    VoxelVolume::new(data, [t; 3], volume.origin)
}

/// Mask counterpart of [`resample_isotropic`]; nearest-neighbor keeps the
/// output binary.
pub fn resample_isotropic_mask(mask: &MaskVolume, target_spacing_mm: f64) -> Result<MaskVolume> {
    if target_spacing_mm <= 0.0 || !target_spacing_mm.is_finite() {
        return Err(Error::Config("target spacing must be > 0".into()));
    }
    let t = target_spacing_mm;
    let out_shape = resampled_shape(mask.shape(), mask.spacing, t);
    let data = Array3::from_shape_fn(out_shape, |(x, y, z)| {
        nearest(
            &mask.data,
            x as f64 * t / mask.spacing[0],
            y as f64 * t / mask.spacing[1],
            z as f64 * t / mask.spacing[2],
        )
    });
    MaskVolume::new(data, [t; 3], mask.origin)
}

fn resize_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Resizes to a fixed grid shape; spacing metadata is rescaled so physical
/// extent is preserved.
pub fn resize_to(volume: &VoxelVolume, target: (usize, usize, usize)) -> Result<VoxelVolume> {
    if target.0 == 0 || target.1 == 0 || target.2 == 0 {
        return Err(Error::Config("target shape components must be >= 1".into()));
    }
    let (nx, ny, nz) = volume.shape();
    if (nx, ny, nz) == target {
        return Ok(volume.clone());
    }
    let data = Array3::from_shape_fn(target, |(x, y, z)| {
        trilinear(
            &volume.data,
            resize_coord(x, nx, target.0),
            resize_coord(y, ny, target.1),
            resize_coord(z, nz, target.2),
        )
    });
    let spacing = [
        volume.spacing[0] * nx as f64 / target.0 as f64,
        volume.spacing[1] * ny as f64 / target.1 as f64,
        volume.spacing[2] * nz as f64 / target.2 as f64,
    ];
    VoxelVolume::new(data, spacing, volume.origin)
}

pub fn resize_to_mask(mask: &MaskVolume, target: (usize, usize, usize)) -> Result<MaskVolume> {
    if target.0 == 0 || target.1 == 0 || target.2 == 0 {
        return Err(Error::Config("target shape components must be >= 1".into()));
    }
    let (nx, ny, nz) = mask.shape();
    if (nx, ny, nz) == target {
        return Ok(mask.clone());
    }
    let data = Array3::from_shape_fn(target, |(x, y, z)| {
        nearest(
            &mask.data,
            resize_coord(x, nx, target.0),
            resize_coord(y, ny, target.1),
            resize_coord(z, nz, target.2),
        )
    });
    let spacing = [
        mask.spacing[0] * nx as f64 / target.0 as f64,
        mask.spacing[1] * ny as f64 / target.1 as f64,
        mask.spacing[2] * nz as f64 / target.2 as f64,
    ];
    MaskVolume::new(data, spacing, mask.origin)
}

/// `out = clamp(in / 2048, -1, 1)`.
pub fn normalize_intensity(volume: &VoxelVolume) -> VoxelVolume {
    let data = volume.data.mapv(|v| (v / 2048.0).clamp(-1.0, 1.0));
    VoxelVolume {
        data,
        spacing: volume.spacing,
        origin: volume.origin,
    }
}

/// Applies a seeded smooth random displacement field to an aligned
/// image/mask pair. Image samples linearly, mask nearest; deterministic for
/// a fixed seed; `max_displacement = 0` is the identity.
pub fn elastic_deform(
    image: &VoxelVolume,
    mask: &MaskVolume,
    params: &ElasticParams,
) -> Result<(VoxelVolume, MaskVolume)> {
    params.validate()?;
    mask.check_aligned(image)?;
    let (nx, ny, nz) = image.shape();
    let extent = [
        nx as f64 * image.spacing[0],
        ny as f64 * image.spacing[1],
        nz as f64 * image.spacing[2],
    ];
    let ctrl_dims: Vec<usize> = extent
        .iter()
        .map(|e| ((e / params.control_grid_spacing).ceil() as usize + 1).max(2))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = params.max_displacement;
    // One displacement grid per axis, values in mm.
    let ctrl: Vec<Array3<f32>> = (0..3)
        .map(|_| {
            Array3::from_shape_fn((ctrl_dims[0], ctrl_dims[1], ctrl_dims[2]), |_| {
                if d == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-d..=d) as f32
                }
            })
        })
        .collect();

    let mut img_out = Array3::zeros((nx, ny, nz));
    let mut mask_out = Array3::zeros((nx, ny, nz));
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let (sx, sy, sz) = if d == 0.0 {
                    (x as f64, y as f64, z as f64)
                } else {
                    // control-grid coordinates of this voxel
                    let cx = x as f64 * image.spacing[0] / params.control_grid_spacing;
                    let cy = y as f64 * image.spacing[1] / params.control_grid_spacing;
                    let cz = z as f64 * image.spacing[2] / params.control_grid_spacing;
                    let disp = [
                        trilinear(&ctrl[0], cx, cy, cz) as f64,
                        trilinear(&ctrl[1], cx, cy, cz) as f64,
                        trilinear(&ctrl[2], cx, cy, cz) as f64,
                    ];
                    (
                        x as f64 + disp[0] / image.spacing[0],
                        y as f64 + disp[1] / image.spacing[1],
                        z as f64 + disp[2] / image.spacing[2],
                    )
                };
                img_out[(x, y, z)] = trilinear(&image.data, sx, sy, sz);
                mask_out[(x, y, z)] = nearest(&mask.data, sx, sy, sz);
            }
        }
    }
    Ok((
        VoxelVolume::new(img_out, image.spacing, image.origin)?,
        MaskVolume::new(mask_out, mask.spacing, mask.origin)?,
    ))
}

/// Number of 6-connected foreground components.
pub fn count_components(mask: &MaskVolume) -> usize {
    let (nx, ny, nz) = mask.shape();
    let mut seen = Array3::<u8>::zeros((nx, ny, nz));
    let mut count = 0;
    let mut stack = Vec::new();
    for start in mask
        .data
        .indexed_iter()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| i)
    {
        if seen[start] == 1 {
            continue;
        }
        count += 1;
        seen[start] = 1;
        stack.push(start);
        while let Some((x, y, z)) = stack.pop() {
            let mut push = |xi: i64, yi: i64, zi: i64| {
                if xi >= 0
                    && yi >= 0
                    && zi >= 0
                    && (xi as usize) < nx
                    && (yi as usize) < ny
                    && (zi as usize) < nz
                {
                    let idx = (xi as usize, yi as usize, zi as usize);
                    if mask.data[idx] == 1 && seen[idx] == 0 {
                        seen[idx] = 1;
                        stack.push(idx);
                    }
                }
            };
            let (xi, yi, zi) = (x as i64, y as i64, z as i64);
            push(xi - 1, yi, zi);
            push(xi + 1, yi, zi);
            push(xi, yi - 1, zi);
            push(xi, yi + 1, zi);
            push(xi, yi, zi - 1);
            push(xi, yi, zi + 1);
        }
    }
    count
}
