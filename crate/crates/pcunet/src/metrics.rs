//! Evaluation metrics: Chamfer distance, Dice's coefficient, and the exact
//! Hausdorff distance on boundary voxels.

use ndarray::Array3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::losses;
use crate::volume::{voxel_to_world, MaskVolume};

/// Chamfer distance in mm; same formula as the training loss, evaluated
/// without gradients.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    losses::chamfer_loss(a, b)
}

/// `2|P and G| / (|P| + |G|)`; the empty-empty case is defined as 1.
pub fn dice_coefficient(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
        inter += (p & g) as usize;
        total += (p + g) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// World-space coordinates of boundary voxels: foreground voxels with at
/// least one background 6-neighbor (grid edges count as background).
pub fn boundary_voxels(mask: &MaskVolume) -> Vec<[f64; 3]> {
    let (nx, ny, nz) = mask.shape();
    let is_fg = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && mask.data[(x as usize, y as usize, z as usize)] == 1
    };
    let mut out = Vec::new();
    for ((x, y, z), &v) in mask.data.indexed_iter() {
        if v != 1 {
            continue;
        }
        let (xi, yi, zi) = (x as i64, y as i64, z as i64);
        let interior = is_fg(xi - 1, yi, zi)
            && is_fg(xi + 1, yi, zi)
            && is_fg(xi, yi - 1, zi)
            && is_fg(xi, yi + 1, zi)
            && is_fg(xi, yi, zi - 1)
            && is_fg(xi, yi, zi + 1);
        if !interior {
            out.push(voxel_to_world((x, y, z), mask).expect("index in bounds"));
        }
    }
    out
}

/// Exact (100th percentile) symmetric Hausdorff distance between foreground
/// boundary voxel sets, in mm.
pub fn hausdorff_distance(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    let a = boundary_voxels(pred);
    let b = boundary_voxels(gt);
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(directed_hausdorff(&a, &b).max(directed_hausdorff(&b, &a)))
}

fn directed_hausdorff(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let tree = KdTree::build(to);
    from.iter()
        .map(|&p| tree.nearest(p).1)
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Thresholds probabilities at `threshold` (voxel = 1 iff prob >= threshold).
pub fn binarize(probs: &Array3<f64>, threshold: f64, spacing: [f64; 3], origin: [f64; 3]) -> Result<MaskVolume> {
    let data = probs.mapv(|p| u8::from(p >= threshold));
    MaskVolume::new(data, spacing, origin)
}
