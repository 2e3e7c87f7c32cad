//! K-fold cross-validation and the variant-comparison matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::Dataset;
use super::evaluate::{evaluate, EvalReport, MetricSummary};
use super::train::{train, TrainReport};
use crate::error::{Error, Result};
use crate::model::{Network, Variant};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub eval: EvalReport,
    pub train: TrainReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub variant: String,
    pub dataset_fingerprint: String,
    pub folds: Vec<FoldResult>,
    /// Mean and SD over fold means.
    pub chamfer: Option<MetricSummary>,
    pub dice: Option<MetricSummary>,
    pub hausdorff: Option<MetricSummary>,
}

impl CvReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn fold_level_summary(
    folds: &[FoldResult],
    pick: fn(&EvalReport) -> Option<&MetricSummary>,
) -> Option<MetricSummary> {
    let means: Vec<f64> = folds
        .iter()
        .filter_map(|f| pick(&f.eval).map(|s| s.mean))
        .collect();
    MetricSummary::over(&means)
}

/// Trains one model per fold on the complementary folds and evaluates it on
/// the held-out fold. The per-fold model seed is derived from the experiment
/// seed so folds differ but reruns do not.
pub fn cross_validate(ds: &Dataset, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<CvReport> {
    cfg.validate()?;
    let mut folds = Vec::with_capacity(ds.manifest.folds);
    for fold in 0..ds.manifest.folds {
        if cfg.verbose {
            eprintln!(
                "{}",
                serde_json::json!({
                    "event": "fold",
                    "variant": cfg.variant.to_string(),
                    "fold": fold,
                    "folds": ds.manifest.folds,
                })
            );
        }
        let (train_set, val_set) = ds.split_fold(fold)?;
        let model_seed = cfg.seed.wrapping_add(1 + fold as u64);
        let mut net = Network::new(cfg.model_config(&ds.manifest, model_seed))?;
        let train_report = train(&mut net, &train_set, &val_set, cfg)?;
        let eval_report = evaluate(&mut net, &val_set)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            net.save(&dir.join(format!("{}_fold{fold}.ckpt", cfg.variant)))?;
            eval_report.write_csv(&dir.join(format!("{}_fold{fold}.csv", cfg.variant)))?;
        }
        folds.push(FoldResult {
            fold,
            eval: eval_report,
            train: train_report,
        });
    }
    let report = CvReport {
        variant: cfg.variant.to_string(),
        dataset_fingerprint: ds.fingerprint(),
        chamfer: fold_level_summary(&folds, |e| e.chamfer.as_ref()),
        dice: fold_level_summary(&folds, |e| e.dice.as_ref()),
        hausdorff: fold_level_summary(&folds, |e| e.hausdorff.as_ref()),
        folds,
    };
    if let Some(dir) = out_dir {
        report.save_json(&dir.join(format!("{}_cv.json", cfg.variant)))?;
    }
    Ok(report)
}

/// Cross-validation results for several variants on one dataset, shaped like
/// the comparison tables: one row per variant, one column per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixReport {
    pub dataset_fingerprint: String,
    pub rows: Vec<CvReport>,
}

/// Combines per-variant reports, refusing to mix results from different
/// datasets into one table.
pub fn combine_reports(reports: Vec<CvReport>) -> Result<MatrixReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("no reports to combine".into()))?;
    let fp = first.dataset_fingerprint.clone();
    for r in &reports {
        if r.dataset_fingerprint != fp {
            return Err(Error::Config(format!(
                "report for {} comes from a different dataset; refusing to combine",
                r.variant
            )));
        }
    }
    Ok(MatrixReport {
        dataset_fingerprint: fp,
        rows: reports,
    })
}

/// Runs cross-validation for each variant in turn.
pub fn run_matrix(
    ds: &Dataset,
    base: &ExperimentConfig,
    variants: &[Variant],
    out_dir: Option<&Path>,
) -> Result<MatrixReport> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let mut cfg = base.clone();
        cfg.variant = variant;
        rows.push(cross_validate(ds, &cfg, out_dir)?);
    }
    let report = combine_reports(rows)?;
    if let Some(dir) = out_dir {
        std::fs::write(
            dir.join("matrix.json"),
            serde_json::to_string_pretty(&report).expect("matrix serializes"),
        )
        .map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("matrix.txt"), report.render_table())
            .map_err(|e| Error::io(dir, e))?;
    }
    Ok(report)
}

fn cell(s: &Option<MetricSummary>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.sd),
        None => "—".to_string(),
    }
}

impl MatrixReport {
    pub fn render_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "variant".into(),
            "chamfer_mm".into(),
            "dice".into(),
            "hausdorff_mm".into(),
        ]];
        for r in &self.rows {
            rows.push([
                r.variant.clone(),
                cell(&r.chamfer),
                cell(&r.dice),
                cell(&r.hausdorff),
            ]);
        }
        let mut widths = [0usize; 4];
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            for (c, w) in row.iter().zip(widths) {
                out.push_str(c);
                out.extend(std::iter::repeat_n(' ', w - c.chars().count() + 2));
            }
            out.pop();
            out.pop();
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 6;
                out.extend(std::iter::repeat_n('-', total));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_dataset, ParamRanges};

    fn tiny() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(4, &ParamRanges::default(), (32, 32, 16), [1.5; 3], 32, 2, 31, dir.path())
            .unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        (dir, ds)
    }

    fn tiny_cfg(variant: Variant) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(variant);
        cfg.encoder_channels = vec![4, 8];
        cfg.pointnet_channels = [8, 16, 32];
        cfg.epochs = 1;
        cfg
    }

    #[test]
    fn cross_validate_covers_every_fold() {
        let (_dir, ds) = tiny();
        let cfg = tiny_cfg(Variant::UnetVol3d);
        let report = cross_validate(&ds, &cfg, None).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert!(report.dice.is_some());
        assert!(report.chamfer.is_none());
        // every sample appears exactly once across the fold evaluations
        let mut seen: Vec<usize> = report
            .folds
            .iter()
            .flat_map(|f| f.eval.samples.iter().map(|s| s.id))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matrix_renders_and_rejects_mixed_datasets() {
        let (_dir, ds) = tiny();
        let cfg = tiny_cfg(Variant::UnetVol3d);
        let matrix = run_matrix(
            &ds,
            &cfg,
            &[Variant::UnetVol3d, Variant::PointoutnetVol3d],
            None,
        )
        .unwrap();
        let table = matrix.render_table();
        assert!(table.contains("unet_vol3d"));
        assert!(table.contains("pointoutnet_vol3d"));
        assert!(table.contains("—"));

        let other_dir = tempfile::tempdir().unwrap();
        make_dataset(4, &ParamRanges::default(), (32, 32, 16), [1.5; 3], 32, 2, 99, other_dir.path()).unwrap();
        let other = Dataset::load(other_dir.path()).unwrap();
        let foreign = cross_validate(&other, &cfg, None).unwrap();
        let mut rows = matrix.rows.clone();
        rows.push(foreign);
        assert!(combine_reports(rows).is_err());
    }

    #[test]
    fn artifacts_written_when_requested() {
        let (_dir, ds) = tiny();
        let cfg = tiny_cfg(Variant::UnetVol3d);
        let out = tempfile::tempdir().unwrap();
        cross_validate(&ds, &cfg, Some(out.path())).unwrap();
        assert!(out.path().join("unet_vol3d_fold0.ckpt").exists());
        assert!(out.path().join("unet_vol3d_fold1.csv").exists());
        let report = CvReport::load_json(&out.path().join("unet_vol3d_cv.json")).unwrap();
        assert_eq!(report.folds.len(), 2);
    }
}
