use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::cloud::{load_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::preprocess::normalize_intensity;
use crate::synthetic::DatasetManifest;
use crate::volume::{load_mask, load_volume, MaskVolume, VoxelVolume};

/// One training/evaluation sample, fully loaded. The image is already
/// intensity-normalized; the cloud is the centered ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub fold: usize,
    pub image: VoxelVolume,
    pub mask: MaskVolume,
    pub cloud: PointCloud,
}

impl Sample {
    /// The ground-truth cloud as the f32 matrix the network consumes.
    pub fn cloud_f32(&self) -> Array2<f32> {
        Array2::from_shape_fn((self.cloud.len(), 3), |(i, k)| {
            self.cloud.points[i][k] as f32
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

/// Re-anchors a manifest path under `dir` when the dataset directory moved.
fn resolve(dir: &Path, stored: &Path) -> PathBuf {
    if stored.exists() {
        return stored.to_path_buf();
    }
    match stored.file_name() {
        Some(name) => dir.join(name),
        None => stored.to_path_buf(),
    }
}

impl Dataset {
    /// Loads every sample referenced by `dir/manifest.json` into memory.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for entry in &manifest.samples {
            let image = load_volume(&resolve(dir, &entry.image))?;
            let mask = load_mask(&resolve(dir, &entry.mask))?;
            mask.check_aligned(&image)?;
            if image.shape() != manifest.grid_shape {
                return Err(Error::ShapeMismatch(format!(
                    "sample {} has shape {:?}, manifest says {:?}",
                    entry.id,
                    image.shape(),
                    manifest.grid_shape
                )));
            }
            let cloud = load_cloud(&resolve(dir, &entry.cloud))?;
            if cloud.len() != manifest.n_points {
                return Err(Error::ShapeMismatch(format!(
                    "sample {} cloud has {} points, manifest says {}",
                    entry.id,
                    cloud.len(),
                    manifest.n_points
                )));
            }
            samples.push(Sample {
                id: entry.id,
                fold: entry.fold,
                image: normalize_intensity(&image),
                mask,
                cloud,
            });
        }
        Ok(Dataset { manifest, samples })
    }

    /// (train, validation) split for one cross-validation fold.
    pub fn split_fold(&self, fold: usize) -> Result<(Vec<&Sample>, Vec<&Sample>)> {
        if fold >= self.manifest.folds {
            return Err(Error::Config(format!(
                "fold {fold} out of range, dataset has {} folds",
                self.manifest.folds
            )));
        }
        let (val, train): (Vec<&Sample>, Vec<&Sample>) =
            self.samples.iter().partition(|s| s.fold == fold);
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config(format!(
                "fold {fold} leaves an empty train or validation set"
            )));
        }
        Ok((train, val))
    }

    pub fn all(&self) -> Vec<&Sample> {
        self.samples.iter().collect()
    }

    /// Identity of the underlying data; reports from different datasets
    /// must not be merged into one table.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:?}|{:?}|{}|{}|{}|{}",
            self.manifest.grid_shape,
            self.manifest.spacing,
            self.manifest.n_points,
            self.manifest.folds,
            self.manifest.master_seed,
            self.manifest.samples.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_dataset, ParamRanges};

    fn small_dataset(dir: &Path) {
        make_dataset(4, &ParamRanges::default(), (48, 48, 32), [1.0; 3], 64, 4, 21, dir).unwrap();
    }

    #[test]
    fn load_and_split() {
        let dir = tempfile::tempdir().unwrap();
        small_dataset(dir.path());
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 4);
        // images are normalized into [-1, 1]
        for s in &ds.samples {
            assert!(s.image.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let (train, val) = ds.split_fold(0).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(val.len(), 1);
        assert!(ds.split_fold(4).is_err());
    }

    #[test]
    fn survives_directory_move() {
        let dir = tempfile::tempdir().unwrap();
        small_dataset(dir.path());
        let moved = tempfile::tempdir().unwrap();
        for f in std::fs::read_dir(dir.path()).unwrap() {
            let f = f.unwrap();
            std::fs::rename(f.path(), moved.path().join(f.file_name())).unwrap();
        }
        let ds = Dataset::load(moved.path()).unwrap();
        assert_eq!(ds.samples.len(), 4);
    }

    #[test]
    fn fingerprints_distinguish_datasets() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        small_dataset(a.path());
        make_dataset(4, &ParamRanges::default(), (48, 48, 32), [1.0; 3], 64, 4, 22, b.path())
            .unwrap();
        let da = Dataset::load(a.path()).unwrap();
        let db = Dataset::load(b.path()).unwrap();
        assert_ne!(da.fingerprint(), db.fingerprint());
        assert_eq!(da.fingerprint(), Dataset::load(a.path()).unwrap().fingerprint());
    }
}
