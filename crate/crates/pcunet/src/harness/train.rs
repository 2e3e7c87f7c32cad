//! Single training run: batched Adam updates, per-variant loss routing,
//! early stopping on validation loss, divergence abort with rollback.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::Sample;
use crate::cloud::{center_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::losses::{chamfer_with_grad, soft_dice_with_grad, total_loss};
use crate::model::Network;
use crate::nn::Adam;
use crate::preprocess::{elastic_deform, ElasticParams};
use crate::shape::{downsample_cloud, mask_to_mesh, mesh_to_dense_cloud, DownsampleMethod};
use crate::volume::{MaskVolume, VoxelVolume};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean reconstruction (point) term, when the variant has one.
    pub train_chamfer: Option<f64>,
    /// Mean segmentation (dice) term, when the variant has one.
    pub train_dice: Option<f64>,
    pub val_chamfer: Option<f64>,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// How many sample passes contributed each loss term; a variant without
    /// a head must contribute zero to that counter.
    pub chamfer_terms: usize,
    pub dice_terms: usize,
}

/// Losses of one sample plus gradients ready for the backward pass.
struct SamplePass {
    total: f64,
    chamfer: Option<f64>,
    dice: Option<f64>,
    g_cloud: Option<Array2<f32>>,
    g_probs: Option<Array3<f32>>,
}

fn run_sample(
    net: &mut Network,
    image: &VoxelVolume,
    mask: &MaskVolume,
    gt_cloud: &PointCloud,
    gt_cloud_f32: &Array2<f32>,
    lambda: f64,
    train: bool,
) -> Result<SamplePass> {
    let x = net.prepare_input(image)?;
    let out = net.forward(&x, Some(gt_cloud_f32), train)?;

    let mut pass = SamplePass {
        total: 0.0,
        chamfer: None,
        dice: None,
        g_cloud: None,
        g_probs: None,
    };
    if let Some(cloud) = &out.cloud {
        let pred = PointCloud::new(
            cloud
                .outer_iter()
                .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                .collect(),
        )?;
        let (lp, gc) = chamfer_with_grad(&pred, gt_cloud)?;
        pass.chamfer = Some(lp);
        pass.g_cloud = Some(Array2::from_shape_fn((pred.len(), 3), |(i, k)| {
            gc[i][k] as f32
        }));
    }
    if let Some(probs) = &out.probs {
        let p64 = probs.mapv(|v| v as f64);
        let (ls, gs) = soft_dice_with_grad(&p64, mask)?;
        pass.dice = Some(ls);
        // the dice term is weighted by lambda only in the joint loss
        let w = if pass.chamfer.is_some() { lambda } else { 1.0 };
        pass.g_probs = Some(gs.mapv(|v| (w * v) as f32));
    }
    pass.total = match (pass.chamfer, pass.dice) {
        (Some(lp), Some(ls)) => total_loss(lp, ls, lambda),
        (Some(lp), None) => lp,
        (None, Some(ls)) => ls,
        (None, None) => return Err(Error::MissingHead(net.config.variant.to_string())),
    };
    Ok(pass)
}

/// Deterministic per-(run, epoch, sample) augmentation seed.
fn aug_seed(base: u64, epoch: usize, id: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 24)
        .wrapping_add(id as u64)
}

/// Elastic-deforms a sample and re-extracts its ground-truth cloud from the
/// deformed mask. Falls back to the original when the deformed mask loses
/// its surface.
fn augment(s: &Sample, cfg: &ExperimentConfig, epoch: usize) -> (VoxelVolume, MaskVolume, PointCloud) {
    let params = ElasticParams {
        seed: aug_seed(cfg.seed, epoch, s.id),
        ..cfg.elastic.clone()
    };
    let deformed = elastic_deform(&s.image, &s.mask, &params).and_then(|(img, mask)| {
        let mesh = mask_to_mesh(&mask, 0.5)?;
        let dense = mesh_to_dense_cloud(&mesh)?;
        let sparse = downsample_cloud(&dense, s.cloud.len(), DownsampleMethod::FarthestPoint, params.seed)?;
        let (centered, _) = center_cloud(&sparse);
        Ok((img, mask, centered))
    });
    match deformed {
        Ok(t) => t,
        Err(_) => (s.image.clone(), s.mask.clone(), s.cloud.clone()),
    }
}

fn snapshot(net: &mut Network) -> Vec<Vec<f32>> {
    net.params_mut()
        .iter()
        .map(|p| p.w.as_slice().expect("param contiguous").to_vec())
        .collect()
}

fn restore(net: &mut Network, snap: &[Vec<f32>]) {
    for (p, s) in net.params_mut().into_iter().zip(snap) {
        p.w.as_slice_mut()
            .expect("param contiguous")
            .copy_from_slice(s);
    }
}

fn mean_of(vals: &[f64]) -> Option<f64> {
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Trains `net` in place and leaves it at the best-validation weights.
pub fn train(
    net: &mut Network,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &ExperimentConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and validation sets must be nonempty".into()));
    }
    let mut opt = Adam::new(cfg.learning_rate as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // model selection: best validation dice term for mask-bearing variants,
    // best validation chamfer otherwise; early stopping watches total loss
    let select_by_dice = net.config.variant.has_mask_head();
    let mut best = snapshot(net);
    let mut best_select = f64::INFINITY;
    let mut best_total = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut chamfer_terms = 0usize;
    let mut dice_terms = 0usize;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut train_totals = Vec::new();
        let mut train_lp = Vec::new();
        let mut train_ls = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for &si in batch {
                let s = train_set[si];
                let pass = if cfg.augment {
                    let (img, mask, cloud) = augment(s, cfg, epoch);
                    let cloud_f32 = Array2::from_shape_fn((cloud.len(), 3), |(i, k)| {
                        cloud.points[i][k] as f32
                    });
                    run_sample(net, &img, &mask, &cloud, &cloud_f32, cfg.lambda, true)?
                } else {
                    run_sample(net, &s.image, &s.mask, &s.cloud, &s.cloud_f32(), cfg.lambda, true)?
                };
                step += 1;
                if !pass.total.is_finite() {
                    restore(net, &best);
                    return Err(Error::Diverged {
                        step,
                        message: format!("non-finite loss on sample {} (weights rolled back)", s.id),
                    });
                }
                if pass.chamfer.is_some() {
                    chamfer_terms += 1;
                }
                if pass.dice.is_some() {
                    dice_terms += 1;
                }
                train_totals.push(pass.total);
                if let Some(v) = pass.chamfer {
                    train_lp.push(v);
                }
                if let Some(v) = pass.dice {
                    train_ls.push(v);
                }
                let gc = pass.g_cloud.map(|g| g * scale);
                let gp = pass.g_probs.map(|g| g * scale);
                net.backward(gc.as_ref(), gp.as_ref());
            }
            opt.step(&mut net.params_mut());
        }

        let mut val_totals = Vec::new();
        let mut val_lp = Vec::new();
        let mut val_ls = Vec::new();
        for s in val_set {
            let pass = run_sample(net, &s.image, &s.mask, &s.cloud, &s.cloud_f32(), cfg.lambda, false)?;
            if !pass.total.is_finite() {
                restore(net, &best);
                return Err(Error::Diverged {
                    step,
                    message: format!(
                        "non-finite validation loss on sample {} (weights rolled back)",
                        s.id
                    ),
                });
            }
            val_totals.push(pass.total);
            if let Some(v) = pass.chamfer {
                val_lp.push(v);
            }
            if let Some(v) = pass.dice {
                val_ls.push(v);
            }
        }
        let val_loss = mean_of(&val_totals).expect("nonempty validation set");

        let stats = EpochStats {
            epoch,
            train_loss: mean_of(&train_totals).expect("nonempty train set"),
            val_loss,
            train_chamfer: mean_of(&train_lp),
            train_dice: mean_of(&train_ls),
            val_chamfer: mean_of(&val_lp),
            val_dice: mean_of(&val_ls),
        };
        if cfg.verbose {
            // progress log: one JSON object per line on stderr
            eprintln!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        let select = if select_by_dice {
            stats.val_dice
        } else {
            stats.val_chamfer
        }
        .unwrap_or(stats.val_loss);
        history.push(stats);

        if select < best_select {
            best_select = select;
            best_epoch = epoch;
            best = snapshot(net);
        }
        if val_loss < best_total {
            best_total = val_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    restore(net, &best);
    Ok(TrainReport {
        best_val_loss: history[best_epoch].val_loss,
        history,
        best_epoch,
        stopped_early,
        chamfer_terms,
        dice_terms,
    })
}
