//! Differentiable training objectives: Chamfer loss, soft Dice loss, and the
//! weighted total.

use ndarray::Array3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::volume::MaskVolume;

/// Smoothing constant in the soft Dice denominator; defines the empty-empty
/// case as loss 0.
pub const DICE_EPSILON: f64 = 1e-6;

/// Default balancing weight between Chamfer and soft Dice terms.
pub const DEFAULT_LAMBDA: f64 = 0.001;

/// Symmetric mean nearest-neighbor distance (unsquared Euclidean norms):
/// `mean_p min_g ||p - g|| + mean_g min_p ||g - p||`.
pub fn chamfer_loss(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    Ok(chamfer_with_grad(pred, gt)?.0)
}

/// Chamfer loss and its gradient with respect to the predicted points.
/// Equidistant nearest neighbors resolve to the lowest index; the gradient at
/// exact coincidence of matched points is 0.
pub fn chamfer_with_grad(pred: &PointCloud, gt: &PointCloud) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidCloud("chamfer loss needs nonempty clouds".into()));
    }
    let np = pred.len() as f64;
    let ng = gt.len() as f64;
    let mut grad = vec![[0.0; 3]; pred.len()];

    // pred -> gt term
    let gt_tree = KdTree::build(&gt.points);
    let mut term1 = 0.0;
    for (i, p) in pred.points.iter().enumerate() {
        let (j, d2) = gt_tree.nearest(*p);
        let d = d2.sqrt();
        term1 += d;
        if d > 0.0 {
            let g = gt.points[j];
            for k in 0..3 {
                grad[i][k] += (p[k] - g[k]) / (d * np);
            }
        }
    }
    term1 /= np;

    // gt -> pred term
    let pred_tree = KdTree::build(&pred.points);
    let mut term2 = 0.0;
    for g in &gt.points {
        let (i, d2) = pred_tree.nearest(*g);
        let d = d2.sqrt();
        term2 += d;
        if d > 0.0 {
            let p = pred.points[i];
            for k in 0..3 {
                grad[i][k] += (p[k] - g[k]) / (d * ng);
            }
        }
    }
    term2 /= ng;

    Ok((term1 + term2, grad))
}

/// `1 - 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps)`.
pub fn soft_dice_loss(probs: &Array3<f64>, gt: &MaskVolume) -> Result<f64> {
    Ok(soft_dice_with_grad(probs, gt)?.0)
}

/// Soft Dice loss and its gradient with respect to the probabilities.
pub fn soft_dice_with_grad(probs: &Array3<f64>, gt: &MaskVolume) -> Result<(f64, Array3<f64>)> {
    if probs.dim() != gt.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "probs {:?} vs mask {:?}",
            probs.dim(),
            gt.data.dim()
        )));
    }
    let mut inter = 0.0;
    let mut p2 = 0.0;
    let mut g2 = 0.0;
    for (&p, &g) in probs.iter().zip(gt.data.iter()) {
        let g = g as f64;
        inter += p * g;
        p2 += p * p;
        g2 += g * g;
    }
    // eps in numerator and denominator so the empty-empty case is loss 0.
    let num = 2.0 * inter + DICE_EPSILON;
    let denom = p2 + g2 + DICE_EPSILON;
    let loss = 1.0 - num / denom;
    // d/dp_i [1 - A/B] = -(2 g_i * B - A * 2 p_i) / B^2
    let grad = ndarray::Zip::from(probs)
        .and(&gt.data)
        .map_collect(|&p, &g| -(2.0 * (g as f64) * denom - num * 2.0 * p) / (denom * denom));
    Ok((loss, grad))
}

/// `l_p + lambda * l_s`.
pub fn total_loss(l_p: f64, l_s: f64, lambda: f64) -> f64 {
    l_p + lambda * l_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn identical_clouds_zero() {
        let a = cloud(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(chamfer_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hand_case_three_four_five() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[3.0, 4.0, 0.0]]);
        assert!((chamfer_loss(&a, &b).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hand_case_asymmetric() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        // mean(0, 1) + 0 = 0.5
        assert!((chamfer_loss(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_translation_invariant() {
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 1.0, 0.5]]);
        let b = cloud(&[[1.0, 1.0, 1.0], [3.0, 0.0, 0.0], [0.5, 0.5, 0.5]]);
        let ab = chamfer_loss(&a, &b).unwrap();
        let ba = chamfer_loss(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let t = [7.0, -3.0, 2.5];
        let shift = |c: &PointCloud| {
            cloud(
                &c.points
                    .iter()
                    .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                    .collect::<Vec<_>>(),
            )
        };
        let shifted = chamfer_loss(&shift(&a), &shift(&b)).unwrap();
        assert!((ab - shifted).abs() < 1e-9);
    }

    #[test]
    fn empty_cloud_rejected_at_construction() {
        assert!(PointCloud::new(vec![]).is_err());
    }

    #[test]
    fn dice_hand_cases() {
        let g = MaskVolume::new(
            Array3::from_shape_fn((4, 4, 4), |(x, _, _)| u8::from(x < 2)),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap();
        // p = g exactly
        let p = g.data.mapv(|v| v as f64);
        assert!(soft_dice_loss(&p, &g).unwrap().abs() < 1e-4);
        // p = 0
        let zero = Array3::zeros((4, 4, 4));
        assert!((soft_dice_loss(&zero, &g).unwrap() - 1.0).abs() < 1e-6);
        // p = 0.5 everywhere, g on half the voxels: 1 - (0.5N)/(0.75N) = 1/3
        let half = Array3::from_elem((4, 4, 4), 0.5);
        assert!((soft_dice_loss(&half, &g).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn dice_empty_empty_is_zero_loss() {
        let g = MaskVolume::new(Array3::zeros((3, 3, 3)), [1.0; 3], [0.0; 3]).unwrap();
        let p = Array3::zeros((3, 3, 3));
        assert_eq!(soft_dice_loss(&p, &g).unwrap(), 0.0);
    }

    #[test]
    fn dice_shape_mismatch() {
        let g = MaskVolume::new(Array3::zeros((3, 3, 3)), [1.0; 3], [0.0; 3]).unwrap();
        let p = Array3::zeros((2, 3, 3));
        assert!(soft_dice_loss(&p, &g).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert!((total_loss(10.0, 0.5, 0.001) - 10.0005).abs() < 1e-12);
        assert_eq!(total_loss(3.25, 9.0, 0.0), 3.25);
    }

    #[test]
    fn chamfer_grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..5 {
            let pred = cloud(
                &(0..8)
                    .map(|_| {
                        [
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                        ]
                    })
                    .collect::<Vec<_>>(),
            );
            let gt = cloud(
                &(0..6)
                    .map(|_| {
                        [
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                        ]
                    })
                    .collect::<Vec<_>>(),
            );
            let (_, grad) = chamfer_with_grad(&pred, &gt).unwrap();
            for (i, gp) in grad.iter().enumerate() {
                for (k, g) in gp.iter().enumerate() {
                    let mut plus = pred.clone();
                    plus.points[i][k] += h;
                    let mut minus = pred.clone();
                    minus.points[i][k] -= h;
                    let fd = (chamfer_loss(&plus, &gt).unwrap()
                        - chamfer_loss(&minus, &gt).unwrap())
                        / (2.0 * h);
                    assert!((g - fd).abs() < 1e-6 + 1e-4 * fd.abs(), "grad {g} vs fd {fd}");
                }
            }
        }
    }
}
