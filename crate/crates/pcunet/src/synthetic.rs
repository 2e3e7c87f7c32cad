//! Procedural phantoms of the LV myocardium wall: thick, apically tapered
//! half-ellipsoid shells with an open base, plus CT-like intensities. These
//! stand in for clinical data so training and the acceptance suite run
//! self-contained.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::center_cloud;
use crate::error::{Error, Result};
use crate::shape::{downsample_cloud, mask_to_mesh, mesh_to_dense_cloud, DownsampleMethod};
use crate::volume::{save_mask, save_volume, MaskVolume, VoxelVolume};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Outer ellipsoid radii (a, b, c) in mm.
    pub outer_radii: [f64; 3],
    /// Wall thickness at the base in mm; must stay below min(outer_radii).
    pub wall_thickness: f64,
    /// Thickness multiplier at the apex, in (0, 1]. Values below 1 thin the
    /// wall toward the apex, reproducing the hard thin-apex geometry.
    pub apex_taper: f64,
    /// Fraction of the top radius above the center where the basal cut sits;
    /// >= 1 closes the shell.
    pub base_cut: f64,
    /// Center translation in mm relative to the grid center.
    pub translation: [f64; 3],
    /// Raw CT-like intensity means and noise.
    pub wall_mean: f64,
    pub blood_mean: f64,
    pub background_mean: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            outer_radii: [20.0, 18.0, 24.0],
            wall_thickness: 5.0,
            apex_taper: 0.5,
            base_cut: 0.2,
            translation: [0.0, 0.0, 0.0],
            wall_mean: 300.0,
            blood_mean: 60.0,
            background_mean: -80.0,
            noise_sd: 25.0,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let min_r = self.outer_radii.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(self.wall_thickness > 0.0 && self.wall_thickness < min_r) {
            return Err(Error::Config(format!(
                "wall_thickness {} must be in (0, {min_r})",
                self.wall_thickness
            )));
        }
        if !(self.apex_taper > 0.0 && self.apex_taper <= 1.0) {
            return Err(Error::Config("apex_taper must be in (0, 1]".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome flags recorded per generated sample.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhantomReport {
    /// Set when the wall is thinner than one voxel somewhere near the apex;
    /// such samples are deliberately kept.
    pub thin_wall_warning: bool,
    pub foreground_fraction: f64,
}

fn ellipsoid_q(p: [f64; 3], center: [f64; 3], radii: [f64; 3]) -> f64 {
    let mut q = 0.0;
    for k in 0..3 {
        let d = (p[k] - center[k]) / radii[k];
        q += d * d;
    }
    q
}

/// Generates a paired (image, mask) phantom. The mask is the region between
/// the outer and inner ellipsoidal surfaces below the basal cut plane; the
/// image is piecewise-constant means plus Gaussian noise. Deterministic per
/// seed.
pub fn generate_phantom(
    params: &PhantomParams,
    grid_shape: (usize, usize, usize),
    spacing: [f64; 3],
) -> Result<(VoxelVolume, MaskVolume, PhantomReport)> {
    params.validate()?;
    let (nx, ny, nz) = grid_shape;
    let center = [
        nx as f64 * spacing[0] / 2.0 + params.translation[0],
        ny as f64 * spacing[1] / 2.0 + params.translation[1],
        nz as f64 * spacing[2] / 2.0 + params.translation[2],
    ];
    let [a, b, c] = params.outer_radii;
    let z_apex = center[2] - c;
    let z_base = center[2] + params.base_cut * c;

    let mut mask = Array3::<u8>::zeros(grid_shape);
    let mut inner_region = Array3::<u8>::zeros(grid_shape);
    let mut min_thickness = f64::INFINITY;
    for ((xi, yi, zi), m) in mask.indexed_iter_mut() {
        let p = [
            xi as f64 * spacing[0],
            yi as f64 * spacing[1],
            zi as f64 * spacing[2],
        ];
        if p[2] > z_base {
            continue;
        }
        let q_out = ellipsoid_q(p, center, [a, b, c]);
        if q_out > 1.0 {
            continue;
        }
        // wall thickness shrinks linearly toward the apex
        let frac = ((p[2] - z_apex) / (z_base - z_apex)).clamp(0.0, 1.0);
        let th = params.wall_thickness * (params.apex_taper + (1.0 - params.apex_taper) * frac);
        min_thickness = min_thickness.min(th);
        let inner = [
            (a - th).max(0.1),
            (b - th).max(0.1),
            (c - th).max(0.1),
        ];
        let q_in = ellipsoid_q(p, center, inner);
        if q_in >= 1.0 {
            *m = 1;
        } else {
            inner_region[(xi, yi, zi)] = 1;
        }
    }

    let fg = mask.iter().filter(|&&v| v == 1).count();
    if fg == 0 {
        return Err(Error::Config("phantom produced an empty mask; radii too small for grid".into()));
    }
    let report = PhantomReport {
        thin_wall_warning: min_thickness < spacing.iter().cloned().fold(f64::INFINITY, f64::min),
        foreground_fraction: fg as f64 / mask.len() as f64,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let image = Array3::from_shape_fn(grid_shape, |idx| {
        let mean = if mask[idx] == 1 {
            params.wall_mean
        } else if inner_region[idx] == 1 {
            params.blood_mean
        } else {
            params.background_mean
        };
        let noise = if params.noise_sd > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        (mean + noise) as f32
    });

    Ok((
        VoxelVolume::new(image, spacing, [0.0; 3])?,
        MaskVolume::new(mask, spacing, [0.0; 3])?,
        report,
    ))
}

/// Jitter ranges for dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRanges {
    pub outer_radii_lo: [f64; 3],
    pub outer_radii_hi: [f64; 3],
    pub wall_thickness: [f64; 2],
    pub apex_taper: [f64; 2],
    pub translation_max: f64,
    pub noise_sd: [f64; 2],
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            outer_radii_lo: [16.0, 14.0, 18.0],
            outer_radii_hi: [24.0, 22.0, 28.0],
            wall_thickness: [3.5, 7.0],
            apex_taper: [0.4, 1.0],
            translation_max: 4.0,
            noise_sd: [15.0, 35.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub cloud: PathBuf,
    pub seed: u64,
    pub fold: usize,
    pub params: PhantomParams,
    pub report: PhantomReport,
    /// Centroid removed when centering the ground-truth cloud, mm.
    pub cloud_centroid: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid_shape: (usize, usize, usize),
    pub spacing: [f64; 3],
    pub n_points: usize,
    pub folds: usize,
    pub master_seed: u64,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn sample_params(rng: &mut ChaCha8Rng, ranges: &ParamRanges, seed: u64) -> PhantomParams {
    let mut radii = [0.0; 3];
    for ((r, &lo), &hi) in radii
        .iter_mut()
        .zip(&ranges.outer_radii_lo)
        .zip(&ranges.outer_radii_hi)
    {
        *r = rng.gen_range(lo..=hi);
    }
    let wall = rng.gen_range(ranges.wall_thickness[0]..=ranges.wall_thickness[1]);
    let t = ranges.translation_max;
    PhantomParams {
        outer_radii: radii,
        wall_thickness: wall.min(radii.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0),
        apex_taper: rng.gen_range(ranges.apex_taper[0]..=ranges.apex_taper[1]),
        translation: [
            rng.gen_range(-t..=t),
            rng.gen_range(-t..=t),
            rng.gen_range(-t..=t),
        ],
        noise_sd: rng.gen_range(ranges.noise_sd[0]..=ranges.noise_sd[1]),
        seed,
        ..Default::default()
    }
}

/// Writes `n_samples` phantom triples (image, mask, centered ground-truth
/// cloud) plus a manifest with fold assignments. Bit-identical for a fixed
/// master seed.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    n_samples: usize,
    ranges: &ParamRanges,
    grid_shape: (usize, usize, usize),
    spacing: [f64; 3],
    n_points: usize,
    folds: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if folds < 2 {
        return Err(Error::Config("folds must be >= 2".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut samples = Vec::with_capacity(n_samples);
    for id in 0..n_samples {
        // Retry jitter draws that leave the foreground fraction outside
        // [1%, 30%] of the grid.
        let (params, image, mask, report) = loop {
            let seed = rng.gen::<u64>();
            let params = sample_params(&mut rng, ranges, seed);
            let (image, mask, report) = generate_phantom(&params, grid_shape, spacing)?;
            if (0.01..=0.30).contains(&report.foreground_fraction) {
                break (params, image, mask, report);
            }
        };
        let mesh = mask_to_mesh(&mask, 0.5)?;
        let dense = mesh_to_dense_cloud(&mesh)?;
        let sparse = downsample_cloud(&dense, n_points, DownsampleMethod::FarthestPoint, params.seed)?;
        let (centered, centroid) = center_cloud(&sparse);

        let image_path = out_dir.join(format!("sample_{id:04}_image.mha"));
        let mask_path = out_dir.join(format!("sample_{id:04}_mask.mha"));
        let cloud_path = out_dir.join(format!("sample_{id:04}_cloud.xyz"));
        save_volume(&image, &image_path)?;
        save_mask(&mask, &mask_path)?;
        crate::cloud::save_cloud(&centered, &cloud_path)?;
        samples.push(ManifestEntry {
            id,
            image: image_path,
            mask: mask_path,
            cloud: cloud_path,
            seed: params.seed,
            fold: id % folds,
            params,
            report,
            cloud_centroid: centroid,
        });
    }
    let manifest = DatasetManifest {
        grid_shape,
        spacing,
        n_points,
        folds,
        master_seed,
        samples,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
