use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pcunet::cloud::{center_cloud, load_cloud, save_cloud};
use pcunet::harness::{
    cross_validate, evaluate, run_matrix, train, Dataset, ExperimentConfig,
};
use pcunet::mesh::save_mesh;
use pcunet::metrics::binarize;
use pcunet::model::{Network, Variant, ALL_VARIANTS};
use pcunet::preprocess::{
    crop_roi, normalize_intensity, resample_isotropic, resample_isotropic_mask, resize_to,
    resize_to_mask,
};
use pcunet::shape::{downsample_cloud, mask_to_mesh, mesh_to_dense_cloud, DownsampleMethod};
use pcunet::synthetic::{make_dataset, ParamRanges};
use pcunet::volume::{load_mask, load_volume, save_mask, save_volume, MaskVolume, VoxelVolume};

#[derive(Parser)]
#[command(name = "pcunet", about = "Joint point-cloud reconstruction and segmentation of the LV wall", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with fold assignments.
    GenerateData(GenerateArgs),
    /// Crop, resample, resize and normalize an image/mask pair.
    Preprocess(PreprocessArgs),
    /// Extract a sparse surface point cloud from a segmentation mask.
    PcFromMask(PcFromMaskArgs),
    /// Train one model on a single train/validation split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// K-fold cross-validation of one variant.
    CrossValidate(CrossValidateArgs),
    /// Cross-validate several variants and render the comparison table.
    RunMatrix(RunMatrixArgs),
    /// Run a checkpoint on one image and export its outputs.
    Export(ExportArgs),
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(['x', ',']).collect();
    if parts.len() != 3 {
        return Err(format!("expected XxYxZ, got '{s}'"));
    }
    let mut d = [0usize; 3];
    for (v, p) in d.iter_mut().zip(&parts) {
        *v = p.trim().parse().map_err(|e| format!("'{p}': {e}"))?;
    }
    Ok((d[0], d[1], d[2]))
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for images, masks, clouds and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    n_samples: usize,
    /// Grid shape, e.g. 64x64x32.
    #[arg(long, value_parser = parse_shape, default_value = "64x64x32")]
    grid: (usize, usize, usize),
    /// Isotropic voxel spacing in mm.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Points per ground-truth cloud.
    #[arg(long, default_value_t = 1024)]
    n_points: usize,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Directory receiving the processed pair.
    #[arg(long)]
    out: PathBuf,
    /// ROI margin around the mask bounding box, mm per side.
    #[arg(long, default_value_t = 10.0)]
    margin_mm: f64,
    /// Isotropic target spacing in mm before the final resize.
    #[arg(long, default_value_t = 1.0)]
    target_spacing: f64,
    /// Final grid shape.
    #[arg(long, value_parser = parse_shape, default_value = "128x128x64")]
    size: (usize, usize, usize),
}

#[derive(Args)]
struct PcFromMaskArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Output cloud path (.xyz or .pcb).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    n_points: usize,
    /// farthest_point or random.
    #[arg(long, default_value = "farthest_point")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also save the intermediate surface mesh as OBJ.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Experiment configuration JSON; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    quiet: bool,
}

impl ExperimentArgs {
    fn build(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => {
                let variant = self
                    .variant
                    .ok_or_else(|| anyhow::anyhow!("--variant is required without --config"))?;
                ExperimentConfig::new(variant)
            }
        };
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.augment {
            cfg.augment = true;
        }
        cfg.verbose = !self.quiet;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fold held out for validation.
    #[arg(long, default_value_t = 0)]
    val_fold: usize,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one fold; all samples when omitted.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Args)]
struct CrossValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct RunMatrixArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variant list; all variants when omitted.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Variant>,
    /// Experiment config files, one table row each; overrides --variants.
    #[arg(long, value_delimiter = ',')]
    configs: Vec<PathBuf>,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw-intensity input image; normalization is applied internally.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference cloud, required by variants that consume it.
    #[arg(long)]
    cloud: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenerateData(a) => cmd_generate(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::PcFromMask(a) => cmd_pc_from_mask(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::CrossValidate(a) => cmd_cross_validate(a),
        Command::RunMatrix(a) => cmd_run_matrix(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<()> {
    let manifest = make_dataset(
        a.n_samples,
        &ParamRanges::default(),
        a.grid,
        [a.spacing; 3],
        a.n_points,
        a.folds,
        a.seed,
        &a.out,
    )?;
    println!(
        "wrote {} samples ({} folds) to {}",
        manifest.samples.len(),
        manifest.folds,
        a.out.display()
    );
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> anyhow::Result<()> {
    let image = load_volume(&a.image)?;
    let mask = load_mask(&a.mask)?;
    let (image, mask) = crop_roi(&image, &mask, a.margin_mm)?;
    let image = resample_isotropic(&image, a.target_spacing)?;
    let mask = resample_isotropic_mask(&mask, a.target_spacing)?;
    let image = resize_to(&image, a.size)?;
    let mask = resize_to_mask(&mask, a.size)?;
    let image = normalize_intensity(&image);
    std::fs::create_dir_all(&a.out)?;
    save_volume(&image, &a.out.join("image.mha"))?;
    save_mask(&mask, &a.out.join("mask.mha"))?;
    println!("preprocessed pair written to {}", a.out.display());
    Ok(())
}

fn cmd_pc_from_mask(a: PcFromMaskArgs) -> anyhow::Result<()> {
    let method = match a.method.as_str() {
        "farthest_point" => DownsampleMethod::FarthestPoint,
        "random" => DownsampleMethod::Random,
        other => bail!("unknown method '{other}' (farthest_point or random)"),
    };
    let mask = load_mask(&a.mask)?;
    let mesh = mask_to_mesh(&mask, 0.5)?;
    if let Some(mesh_path) = &a.mesh_out {
        save_mesh(&mesh, mesh_path)?;
    }
    let dense = mesh_to_dense_cloud(&mesh)?;
    let sparse = downsample_cloud(&dense, a.n_points, method, a.seed)?;
    let (centered, centroid) = center_cloud(&sparse);
    save_cloud(&centered, &a.out)?;
    println!(
        "wrote {} points to {} (removed centroid [{:.3}, {:.3}, {:.3}] mm)",
        centered.len(),
        a.out.display(),
        centroid[0],
        centroid[1],
        centroid[2]
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.experiment.build()?;
    let ds = Dataset::load(&a.data)?;
    let (train_set, val_set) = ds.split_fold(a.val_fold)?;
    let mut net = Network::new(cfg.model_config(&ds.manifest, cfg.seed))?;
    eprintln!(
        "{}",
        serde_json::json!({
            "event": "train_start",
            "variant": cfg.variant.to_string(),
            "parameters": net.count_parameters(),
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
        })
    );
    let report = train(&mut net, &train_set, &val_set, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    net.save(&a.out.join("model.ckpt"))?;
    cfg.save(&a.out.join("experiment.json"))?;
    // line-delimited JSON: one epoch record per line
    let mut log = String::new();
    for stats in &report.history {
        log.push_str(&serde_json::to_string(stats)?);
        log.push('\n');
    }
    std::fs::write(a.out.join("history.jsonl"), log)?;
    std::fs::write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "best validation loss {:.5} at epoch {} ({} epochs run{})",
        report.best_val_loss,
        report.best_epoch + 1,
        report.history.len(),
        if report.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut net = Network::load(&a.checkpoint)?;
    let samples = match a.fold {
        Some(fold) => ds.split_fold(fold)?.1,
        None => ds.all(),
    };
    let report = evaluate(&mut net, &samples)?;
    std::fs::create_dir_all(&a.out)?;
    report.write_csv(&a.out.join("eval.csv"))?;
    report.save_json(&a.out.join("summary.json"))?;
    let show = |name: &str, s: &Option<pcunet::harness::MetricSummary>| match s {
        Some(s) => println!("{name}: {:.4} ± {:.4} (n={})", s.mean, s.sd, s.n),
        None => println!("{name}: —"),
    };
    show("chamfer_mm", &report.chamfer);
    show("dice", &report.dice);
    show("hausdorff_mm", &report.hausdorff);
    Ok(())
}

fn cmd_cross_validate(a: CrossValidateArgs) -> anyhow::Result<()> {
    let cfg = a.experiment.build()?;
    let ds = Dataset::load(&a.data)?;
    let report = cross_validate(&ds, &cfg, Some(&a.out))?;
    let show = |name: &str, s: &Option<pcunet::harness::MetricSummary>| match s {
        Some(s) => println!("{name}: {:.4} ± {:.4} over {} folds", s.mean, s.sd, s.n),
        None => println!("{name}: —"),
    };
    show("chamfer_mm", &report.chamfer);
    show("dice", &report.dice);
    show("hausdorff_mm", &report.hausdorff);
    Ok(())
}

fn cmd_run_matrix(a: RunMatrixArgs) -> anyhow::Result<()> {
    let ds = Dataset::load(&a.data)?;
    let report = if !a.configs.is_empty() {
        // one explicit experiment config per table row
        let mut rows = Vec::new();
        for path in &a.configs {
            let mut cfg = ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?;
            cfg.verbose = !a.experiment.quiet;
            rows.push(pcunet::harness::cross_validate(&ds, &cfg, Some(&a.out))?);
        }
        let report = pcunet::harness::combine_reports(rows)?;
        std::fs::create_dir_all(&a.out)?;
        std::fs::write(
            a.out.join("matrix.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        std::fs::write(a.out.join("matrix.txt"), report.render_table())?;
        report
    } else {
        let mut exp = a.experiment.clone();
        if exp.variant.is_none() && exp.config.is_none() {
            // run_matrix overrides the variant per row anyway
            exp.variant = Some(Variant::Pcunet3d);
        }
        let cfg = exp.build()?;
        let variants: Vec<Variant> = if a.variants.is_empty() {
            ALL_VARIANTS.to_vec()
        } else {
            a.variants.clone()
        };
        run_matrix(&ds, &cfg, &variants, Some(&a.out))?
    };
    print!("{}", report.render_table());
    Ok(())
}

/// Flat PPM snapshot of the middle z slice: grayscale image with the
/// predicted mask blended in red and predicted points in green.
fn write_overlay(
    path: &Path,
    image: &VoxelVolume,
    pred_mask: Option<&MaskVolume>,
    point_hits: Option<&MaskVolume>,
) -> anyhow::Result<()> {
    let (nx, ny, nz) = image.shape();
    let mid = nz / 2;
    let mut buf = Vec::with_capacity(nx * ny * 3);
    for y in 0..ny {
        for x in 0..nx {
            // normalized intensities sit in [-1, 1]
            let g = ((image.data[[x, y, mid]] + 1.0) * 127.5).clamp(0.0, 255.0) as u8;
            let mut px = [g, g, g];
            if let Some(m) = pred_mask {
                if m.data[[x, y, mid]] == 1 {
                    px = [((g as u16 + 255) / 2) as u8, g / 2, g / 2];
                }
            }
            if let Some(p) = point_hits {
                if p.data[[x, y, mid]] == 1 {
                    px = [0, 255, 0];
                }
            }
            buf.extend_from_slice(&px);
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(format!("P6\n{nx} {ny}\n255\n").as_bytes());
    out.extend_from_slice(&buf);
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_export(a: ExportArgs) -> anyhow::Result<()> {
    let mut net = Network::load(&a.checkpoint)?;
    let image = normalize_intensity(&load_volume(&a.image)?);
    let gt = match &a.cloud {
        Some(p) => Some(load_cloud(p)?),
        None => None,
    };
    let gt_f32 = gt.as_ref().map(|c| {
        ndarray::Array2::from_shape_fn((c.len(), 3), |(i, k)| c.points[i][k] as f32)
    });
    let x = net.prepare_input(&image)?;
    let out = net.forward(&x, gt_f32.as_ref(), false)?;
    std::fs::create_dir_all(&a.out)?;

    let mut pred_mask = None;
    if let Some(probs) = &out.probs {
        let p64 = probs.mapv(|v| v as f64);
        let mask = binarize(&p64, 0.5, image.spacing, image.origin)?;
        save_mask(&mask, &a.out.join("mask.mha"))?;
        match mask_to_mesh(&mask, 0.5) {
            Ok(mesh) => save_mesh(&mesh, &a.out.join("mesh.obj"))?,
            Err(e) => eprintln!("no surface mesh exported: {e}"),
        }
        pred_mask = Some(mask);
    }

    let mut point_hits = None;
    if let Some(cloud) = &out.cloud {
        let pred = pcunet::cloud::PointCloud::new(
            cloud
                .outer_iter()
                .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                .collect(),
        )?;
        save_cloud(&pred, &a.out.join("cloud.xyz"))?;
        // the cloud lives in a centered frame; anchor it at the grid center
        // for the overlay
        let (nx, ny, nz) = image.shape();
        let anchor = [
            image.origin[0] + nx as f64 * image.spacing[0] / 2.0,
            image.origin[1] + ny as f64 * image.spacing[1] / 2.0,
            image.origin[2] + nz as f64 * image.spacing[2] / 2.0,
        ];
        let shifted = pcunet::cloud::PointCloud::new(
            pred.points
                .iter()
                .map(|p| [p[0] + anchor[0], p[1] + anchor[1], p[2] + anchor[2]])
                .collect(),
        )?;
        point_hits = Some(pcunet::shape::rasterize_cloud(
            &shifted,
            image.shape(),
            image.spacing,
            image.origin,
        )?);
    }

    write_overlay(
        &a.out.join("overlay.ppm"),
        &image,
        pred_mask.as_ref(),
        point_hits.as_ref(),
    )?;
    println!("export written to {}", a.out.display());
    Ok(())
}
