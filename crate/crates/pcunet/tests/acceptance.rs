//! Acceptance suite. Each test prints one `acceptance criterion N (...): PASS/FAIL`
//! line. Criteria 1–5 are fast oracle checks; criteria 6–8 share one desk-scale
//! synthetic experiment (50 phantoms, 4-fold cross-validation) and together take
//! on the order of an hour or more on one CPU core.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcunet::cloud::{center_cloud, PointCloud};
use pcunet::harness::{cross_validate, evaluate, train, CvReport, Dataset, ExperimentConfig};
use pcunet::losses::{chamfer_loss, chamfer_with_grad, soft_dice_loss, soft_dice_with_grad};
use pcunet::metrics::{boundary_voxels, dice_coefficient, hausdorff_distance};
use pcunet::model::{ModelConfig, Network, Variant};
use pcunet::shape::{
    downsample_cloud, farthest_point_indices, mask_to_mesh, mesh_to_dense_cloud, DownsampleMethod,
};
use pcunet::synthetic::{make_dataset, ParamRanges};
use pcunet::volume::{MaskVolume, VoxelVolume};

fn verdict(n: usize, name: &str, failures: &[String]) {
    let pass = failures.is_empty();
    println!(
        "acceptance criterion {n} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}): {}", failures.join("; "));
}

fn rand_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                ]
            })
            .collect(),
    )
    .unwrap()
}

/// All-pairs Chamfer oracle: mean nearest-neighbor distance in each
/// direction, summed.
fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let directed = |p: &[[f64; 3]], q: &[[f64; 3]]| -> f64 {
        p.iter()
            .map(|x| {
                q.iter()
                    .map(|y| {
                        ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2))
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / p.len() as f64
    };
    directed(&a.points, &b.points) + directed(&b.points, &a.points)
}

#[test]
fn criterion_1_loss_oracles() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..100 {
        let (na, nb) = (rng.gen_range(1..=256), rng.gen_range(1..=256));
        let a = rand_cloud(&mut rng, na, 5.0);
        let b = rand_cloud(&mut rng, nb, 5.0);
        let fast = chamfer_loss(&a, &b).unwrap();
        let brute = brute_chamfer(&a, &b);
        if (fast - brute).abs() > 1e-9 * brute.max(1.0) {
            failures.push(format!("pair {i}: fast {fast} vs brute {brute}"));
        }
    }
    let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
    let b = PointCloud::new(vec![[3.0, 4.0, 0.0]]).unwrap();
    if chamfer_loss(&a, &b).unwrap() != 10.0 {
        failures.push("hand case {(0,0,0)}<->{(3,4,0)} != 10.0".into());
    }
    let p = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
    let g = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
    if chamfer_loss(&p, &g).unwrap() != 0.5 {
        failures.push("asymmetric hand case != 0.5".into());
    }
    if start.elapsed().as_secs_f64() >= 10.0 {
        failures.push(format!("ran {:?}, budget is 10 s", start.elapsed()));
    }
    verdict(1, "loss oracles", &failures);
}

/// Smallest gap between best and second-best nearest-neighbor distance over
/// both Chamfer directions; instances with near-ties are rejected because
/// the finite-difference step could flip the assignment.
fn chamfer_tie_gap(a: &PointCloud, b: &PointCloud) -> f64 {
    let gap = |p: &[[f64; 3]], q: &[[f64; 3]]| -> f64 {
        let mut worst = f64::INFINITY;
        for x in p {
            let mut best = f64::INFINITY;
            let mut second = f64::INFINITY;
            for y in q {
                let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2))
                    .sqrt();
                if d < best {
                    second = best;
                    best = d;
                } else if d < second {
                    second = d;
                }
            }
            if second.is_finite() {
                worst = worst.min(second - best);
            }
        }
        worst
    };
    gap(&a.points, &b.points).min(gap(&b.points, &a.points))
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let rel_ok = |a: f64, f: f64| (a - f).abs() < 1e-4 * a.abs().max(f.abs()).max(1e-6);

    let mut done = 0;
    while done < 20 {
        let (np, ng) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let pred = rand_cloud(&mut rng, np, 2.0);
        let gt = rand_cloud(&mut rng, ng, 2.0);
        if chamfer_tie_gap(&pred, &gt) < 1e-3 {
            continue;
        }
        let (_, grad) = chamfer_with_grad(&pred, &gt).unwrap();
        let h = 1e-5;
        for (i, gp) in grad.iter().enumerate() {
            for (k, &g) in gp.iter().enumerate() {
                let mut plus = pred.clone();
                plus.points[i][k] += h;
                let mut minus = pred.clone();
                minus.points[i][k] -= h;
                let fd = (chamfer_loss(&plus, &gt).unwrap() - chamfer_loss(&minus, &gt).unwrap())
                    / (2.0 * h);
                if !rel_ok(g, fd) {
                    failures.push(format!(
                        "chamfer instance {done} point {i}.{k}: analytic {g} vs fd {fd}"
                    ));
                }
            }
        }
        done += 1;
    }

    for inst in 0..20 {
        let dims = (
            rng.gen_range(2..=8usize),
            rng.gen_range(2..=8usize),
            rng.gen_range(2..=8usize),
        );
        let probs = Array3::from_shape_simple_fn(dims, || rng.gen_range(0.05..0.95));
        let mask = MaskVolume::new(
            Array3::from_shape_simple_fn(dims, || u8::from(rng.gen_bool(0.5))),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap();
        let (_, grad) = soft_dice_with_grad(&probs, &mask).unwrap();
        let h = 1e-6;
        for (idx, &g) in grad.indexed_iter() {
            let mut plus = probs.clone();
            plus[idx] += h;
            let mut minus = probs.clone();
            minus[idx] -= h;
            let fd = (soft_dice_loss(&plus, &mask).unwrap()
                - soft_dice_loss(&minus, &mask).unwrap())
                / (2.0 * h);
            if !rel_ok(g, fd) {
                failures.push(format!(
                    "dice instance {inst} voxel {idx:?}: analytic {g} vs fd {fd}"
                ));
            }
        }
    }
    if start.elapsed().as_secs_f64() >= 30.0 {
        failures.push(format!("ran {:?}, budget is 30 s", start.elapsed()));
    }
    verdict(2, "gradient checks", &failures);
}

#[test]
fn criterion_3_architecture_contracts() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    for (shape, n_points) in [([128usize, 128, 64], 4096usize), ([32, 32, 16], 256)] {
        let cfg = ModelConfig::new(Variant::Pcunet3d, shape, n_points, 1);
        let mut net = Network::new(cfg).unwrap();
        let vol = VoxelVolume::new(
            Array3::from_shape_simple_fn((shape[0], shape[1], shape[2]), || {
                rng.gen_range(-1.0..1.0f32)
            }),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap();
        let x = net.prepare_input(&vol).unwrap();
        let out = net.forward(&x, None, false).unwrap();
        if out.cloud.as_ref().map(|c| c.dim()) != Some((n_points, 3)) {
            failures.push(format!("{shape:?}: cloud shape != ({n_points}, 3)"));
        }
        if out.probs.as_ref().map(|p| p.dim()) != Some((shape[0], shape[1], shape[2])) {
            failures.push(format!("{shape:?}: mask grid != input shape"));
        }
    }

    // global point feature: permuting the cloud fed to the point net must
    // leave the decoded mask bit-identical
    let mut cfg = ModelConfig::new(Variant::Pcunet3d, [32, 32, 16], 256, 2);
    cfg.feed_gt_cloud = true;
    let mut net = Network::new(cfg).unwrap();
    let x = Array4::from_shape_simple_fn((1, 32, 32, 16), || rng.gen_range(-1.0..1.0f32));
    let gt = Array2::from_shape_simple_fn((256, 3), || rng.gen_range(-10.0..10.0f32));
    let base = net.forward(&x, Some(&gt), false).unwrap().probs.unwrap();
    let mut order: Vec<usize> = (0..256).collect();
    for p in 0..50 {
        order.shuffle(&mut rng);
        let permuted = Array2::from_shape_fn((256, 3), |(r, c)| gt[[order[r], c]]);
        let probs = net
            .forward(&x, Some(&permuted), false)
            .unwrap()
            .probs
            .unwrap();
        if base
            .iter()
            .zip(probs.iter())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            failures.push(format!("permutation {p}: point feature not bit-identical"));
            break;
        }
    }

    // the no-skip ablation must not react to zeroed skip features
    let cfg = ModelConfig::new(Variant::PcunetNoSkip, [32, 32, 16], 256, 3);
    let mut net = Network::new(cfg).unwrap();
    let plain = net.forward(&x, None, false).unwrap();
    let zeroed = net.forward_zeroed_skips(&x, None).unwrap();
    let clouds_same = plain
        .cloud
        .as_ref()
        .unwrap()
        .iter()
        .zip(zeroed.cloud.as_ref().unwrap().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let probs_same = plain
        .probs
        .as_ref()
        .unwrap()
        .iter()
        .zip(zeroed.probs.as_ref().unwrap().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !clouds_same || !probs_same {
        failures.push("pcunet_no_skip output changed when skips were zeroed".into());
    }

    verdict(3, "architecture contracts", &failures);
}

#[test]
fn criterion_4_geometry_pipeline() {
    let mut failures = Vec::new();

    // solid ball, radius 10 voxels at 1 mm spacing
    let c = 16.0;
    let mask = MaskVolume::new(
        Array3::from_shape_fn((33, 33, 33), |(x, y, z)| {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
            u8::from(d2 <= 100.0)
        }),
        [1.0; 3],
        [0.0; 3],
    )
    .unwrap();
    let mesh = mask_to_mesh(&mask, 0.5).unwrap();
    for v in &mesh.vertices {
        let r = ((v[0] - c).powi(2) + (v[1] - c).powi(2) + (v[2] - c).powi(2)).sqrt();
        if !(9.0..=11.0).contains(&r) {
            failures.push(format!("mesh vertex at radius {r:.3} outside [9, 11]"));
            break;
        }
    }

    // downsampling keeps points verbatim
    let dense = mesh_to_dense_cloud(&mesh).unwrap();
    let sparse = downsample_cloud(&dense, 256, DownsampleMethod::FarthestPoint, 7).unwrap();
    let dense_set: HashSet<[u64; 3]> = dense
        .points
        .iter()
        .map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()])
        .collect();
    if !sparse
        .points
        .iter()
        .all(|p| dense_set.contains(&[p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]))
    {
        failures.push("downsampled cloud is not a verbatim subset".into());
    }

    // FPS against an independent greedy oracle (ties to the lowest index)
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for t in 0..10 {
        let size = rng.gen_range(2..=256);
        let cloud = rand_cloud(&mut rng, size, 20.0);
        let n = rng.gen_range(1..=cloud.len());
        let start = rng.gen_range(0..cloud.len());
        let got = farthest_point_indices(&cloud.points, n, start);
        let mut min_d2 = vec![f64::INFINITY; cloud.len()];
        let mut oracle = vec![start];
        for _ in 1..n {
            let p = cloud.points[*oracle.last().unwrap()];
            for (i, q) in cloud.points.iter().enumerate() {
                let d2 =
                    (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
                min_d2[i] = min_d2[i].min(d2);
            }
            let mut best = 0;
            for i in 1..cloud.len() {
                if min_d2[i] > min_d2[best] {
                    best = i;
                }
            }
            oracle.push(best);
        }
        if got != oracle {
            failures.push(format!("FPS trial {t} deviates from the oracle"));
        }
    }

    // centering
    let cloud = rand_cloud(&mut rng, 100, 50.0);
    let (centered, _) = center_cloud(&cloud);
    let cen = centered.centroid();
    if cen.iter().any(|v| v.abs() > 1e-6) {
        failures.push(format!("centroid after centering: {cen:?}"));
    }

    verdict(4, "geometry pipeline", &failures);
}

fn brute_hausdorff(a: &MaskVolume, b: &MaskVolume) -> f64 {
    let pa = boundary_voxels(a);
    let pb = boundary_voxels(b);
    let directed = |p: &[[f64; 3]], q: &[[f64; 3]]| -> f64 {
        p.iter()
            .map(|x| {
                q.iter()
                    .map(|y| {
                        ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2))
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

#[test]
fn criterion_5_metric_oracles() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    let rand_blob = |rng: &mut ChaCha8Rng| -> MaskVolume {
        let cx = rng.gen_range(4.0..10.0);
        let cy = rng.gen_range(4.0..10.0);
        let cz = rng.gen_range(4.0..10.0);
        let r = rng.gen_range(1.5..4.5);
        MaskVolume::new(
            Array3::from_shape_fn((14, 14, 14), |(x, y, z)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
                u8::from(d2 <= r * r)
            }),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap()
    };
    for t in 0..20 {
        let a = rand_blob(&mut rng);
        let b = rand_blob(&mut rng);
        assert!(boundary_voxels(&a).len() <= 500 && boundary_voxels(&b).len() <= 500);
        let fast = hausdorff_distance(&a, &b).unwrap();
        let brute = brute_hausdorff(&a, &b);
        if fast != brute {
            failures.push(format!("HD trial {t}: fast {fast} vs brute {brute}"));
        }
    }

    let grid = |fg: &[(usize, usize, usize)]| -> MaskVolume {
        let mut data = Array3::zeros((8, 8, 8));
        for &idx in fg {
            data[idx] = 1u8;
        }
        MaskVolume::new(data, [1.0; 3], [0.0; 3]).unwrap()
    };
    let a = grid(&[(1, 1, 1), (2, 1, 1)]);
    if dice_coefficient(&a, &a).unwrap() != 1.0 {
        failures.push("Dice of identical masks != 1".into());
    }
    let b = grid(&[(5, 5, 5), (6, 5, 5)]);
    if dice_coefficient(&a, &b).unwrap() != 0.0 {
        failures.push("Dice of disjoint masks != 0".into());
    }
    let c = grid(&[(2, 1, 1), (3, 1, 1)]);
    if dice_coefficient(&a, &c).unwrap() != 0.5 {
        failures.push("Dice with half overlap != 0.5".into());
    }

    let u = grid(&[(1, 2, 2)]);
    let v = grid(&[(4, 2, 2)]);
    if hausdorff_distance(&u, &v).unwrap() != 3.0 {
        failures.push("single-voxel HD != 3.0 mm".into());
    }

    verdict(5, "metric oracles", &failures);
}

// --- desk-scale experiment shared by criteria 6-8 -------------------------

const DESK_SAMPLES: usize = 50;
const DESK_GRID: (usize, usize, usize) = (64, 64, 32);
const DESK_POINTS: usize = 1024;
const DESK_FOLDS: usize = 4;
const DESK_MASTER_SEED: u64 = 42;
const DESK_EPOCHS: usize = 10;
const DESK_SEED: u64 = 1;

fn desk_config(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(variant);
    cfg.epochs = DESK_EPOCHS;
    cfg.seed = DESK_SEED;
    cfg.verbose = true;
    cfg
}

struct DeskScale {
    _dir: tempfile::TempDir,
    ds: Dataset,
    unet: CvReport,
    pointoutnet: CvReport,
    pcunet: CvReport,
    untrained_chamfer: f64,
}

static DESK: OnceLock<DeskScale> = OnceLock::new();

fn desk() -> &'static DeskScale {
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(
            DESK_SAMPLES,
            &ParamRanges::default(),
            DESK_GRID,
            [1.0; 3],
            DESK_POINTS,
            DESK_FOLDS,
            DESK_MASTER_SEED,
            dir.path(),
        )
        .unwrap();
        let ds = Dataset::load(dir.path()).unwrap();

        // mean Chamfer of an untrained model over the same fold protocol
        let cfg = desk_config(Variant::Pcunet3d);
        let mut untrained_means = Vec::new();
        for fold in 0..DESK_FOLDS {
            let (_, val) = ds.split_fold(fold).unwrap();
            let mut net = Network::new(
                cfg.model_config(&ds.manifest, cfg.seed.wrapping_add(1 + fold as u64)),
            )
            .unwrap();
            let eval = evaluate(&mut net, &val).unwrap();
            untrained_means.push(eval.chamfer.unwrap().mean);
        }
        let untrained_chamfer =
            untrained_means.iter().sum::<f64>() / untrained_means.len() as f64;

        let cv = |v: Variant| cross_validate(&ds, &desk_config(v), None).unwrap();
        DeskScale {
            unet: cv(Variant::UnetVol3d),
            pointoutnet: cv(Variant::PointoutnetVol3d),
            pcunet: cv(Variant::Pcunet3d),
            _dir: dir,
            ds,
            untrained_chamfer,
        }
    })
}

fn fold_means(report: &CvReport, pick: fn(&pcunet::harness::EvalReport) -> Option<f64>) -> Vec<f64> {
    report.folds.iter().map(|f| pick(&f.eval).unwrap()).collect()
}

#[test]
fn criterion_6_desk_scale_end_to_end() {
    let desk = desk();
    let mut failures = Vec::new();

    let pcu = &desk.pcunet;
    let unet = &desk.unet;
    let pout = &desk.pointoutnet;

    let pcu_dice = pcu.dice.as_ref().unwrap().mean;
    if pcu_dice < 0.70 {
        failures.push(format!("pcunet_3d mean Dice {pcu_dice:.4} < 0.70"));
    }
    let pcu_cd = pcu.chamfer.as_ref().unwrap().mean;
    if pcu_cd > 0.5 * desk.untrained_chamfer {
        failures.push(format!(
            "pcunet_3d mean CD {pcu_cd:.4} > 0.5 x untrained CD {:.4}",
            desk.untrained_chamfer
        ));
    }

    // ordinal trends, each allowed one fold violation out of four
    let hd_pcu = fold_means(pcu, |e| e.hausdorff.as_ref().map(|s| s.mean));
    let hd_unet = fold_means(unet, |e| e.hausdorff.as_ref().map(|s| s.mean));
    let hd_violations = hd_pcu
        .iter()
        .zip(&hd_unet)
        .filter(|(p, u)| p > u)
        .count();
    if hd_violations > 1 {
        failures.push(format!(
            "pcunet_3d HD {hd_pcu:?} beats unet_vol3d HD {hd_unet:?} in too few folds"
        ));
    }
    let cd_pcu = fold_means(pcu, |e| e.chamfer.as_ref().map(|s| s.mean));
    let cd_pout = fold_means(pout, |e| e.chamfer.as_ref().map(|s| s.mean));
    let cd_violations = cd_pcu
        .iter()
        .zip(&cd_pout)
        .filter(|(p, o)| p > o)
        .count();
    if cd_violations > 1 {
        failures.push(format!(
            "pcunet_3d CD {cd_pcu:?} beats pointoutnet_vol3d CD {cd_pout:?} in too few folds"
        ));
    }

    println!(
        "criterion 6 detail: pcunet_3d Dice {pcu_dice:.4}, CD {pcu_cd:.4} (untrained {:.4}), \
         HD folds {hd_pcu:?} vs unet {hd_unet:?}, CD folds {cd_pcu:?} vs pointoutnet {cd_pout:?}",
        desk.untrained_chamfer
    );
    verdict(6, "desk-scale end-to-end", &failures);
}

#[test]
fn criterion_7_ablation_direction() {
    let desk = desk();
    let mut failures = Vec::new();

    let (train_set, val_set) = desk.ds.split_fold(0).unwrap();
    let cfg = desk_config(Variant::PcunetNoSkip);
    let mut net = Network::new(
        cfg.model_config(&desk.ds.manifest, cfg.seed.wrapping_add(1)),
    )
    .unwrap();
    train(&mut net, &train_set, &val_set, &cfg).unwrap();
    let noskip_dice = evaluate(&mut net, &val_set)
        .unwrap()
        .dice
        .unwrap()
        .mean;

    let pcu_dice = desk.pcunet.folds[0]
        .eval
        .dice
        .as_ref()
        .unwrap()
        .mean;
    println!(
        "criterion 7 detail: fold 0 Dice pcunet_3d {pcu_dice:.4} vs pcunet_no_skip {noskip_dice:.4}"
    );
    if pcu_dice - noskip_dice < 0.05 {
        failures.push(format!(
            "Dice gain {:.4} from skip connections below 0.05",
            pcu_dice - noskip_dice
        ));
    }
    verdict(7, "ablation direction", &failures);
}

#[test]
fn criterion_8_determinism() {
    let desk = desk();
    let mut failures = Vec::new();

    // smallest held-out fold of the 50/4 split
    let fold = (0..DESK_FOLDS)
        .min_by_key(|&f| desk.ds.split_fold(f).unwrap().1.len())
        .unwrap();
    let run = |tag: &str| -> Vec<u8> {
        let (train_set, val_set) = desk.ds.split_fold(fold).unwrap();
        let cfg = desk_config(Variant::Pcunet3d);
        let mut net = Network::new(
            cfg.model_config(&desk.ds.manifest, cfg.seed.wrapping_add(1 + fold as u64)),
        )
        .unwrap();
        train(&mut net, &train_set, &val_set, &cfg).unwrap();
        let eval = evaluate(&mut net, &val_set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("{tag}.csv"));
        eval.write_csv(&path).unwrap();
        std::fs::read(&path).unwrap()
    };
    let first = run("first");
    let second = run("second");
    if first != second {
        failures.push("metric CSVs from identical runs differ".into());
    }
    verdict(8, "determinism", &failures);
}
