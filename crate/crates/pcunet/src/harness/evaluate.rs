//! Held-out evaluation: per-sample metric rows plus mean/SD summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::metrics::{binarize, chamfer_distance, dice_coefficient, hausdorff_distance};
use crate::model::Network;

/// Metrics of one sample; `None` where the variant lacks the relevant head
/// (or the Hausdorff distance is undefined because a mask has no surface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: usize,
    pub fold: usize,
    pub chamfer: Option<f64>,
    pub dice: Option<f64>,
    pub hausdorff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn over(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary { mean, sd, n })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub samples: Vec<SampleMetrics>,
    pub chamfer: Option<MetricSummary>,
    pub dice: Option<MetricSummary>,
    pub hausdorff: Option<MetricSummary>,
}

pub const MASK_THRESHOLD: f64 = 0.5;

/// Runs the network over `samples` and computes Chamfer distance against the
/// ground-truth cloud, Dice and exact Hausdorff distance against the
/// ground-truth mask.
pub fn evaluate(net: &mut Network, samples: &[&Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let x = net.prepare_input(&s.image)?;
        let out = net.forward(&x, Some(&s.cloud_f32()), false)?;
        let chamfer = match &out.cloud {
            Some(cloud) => {
                let pred = PointCloud::new(
                    cloud
                        .outer_iter()
                        .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                        .collect(),
                )?;
                Some(chamfer_distance(&pred, &s.cloud)?)
            }
            None => None,
        };
        let (dice, hausdorff) = match &out.probs {
            Some(probs) => {
                let p64 = probs.mapv(|v| v as f64);
                let pred = binarize(&p64, MASK_THRESHOLD, s.mask.spacing, s.mask.origin)?;
                let d = dice_coefficient(&pred, &s.mask)?;
                let hd = match hausdorff_distance(&pred, &s.mask) {
                    Ok(v) => Some(v),
                    Err(Error::EmptyMask) => None,
                    Err(e) => return Err(e),
                };
                (Some(d), hd)
            }
            None => (None, None),
        };
        rows.push(SampleMetrics {
            id: s.id,
            fold: s.fold,
            chamfer,
            dice,
            hausdorff,
        });
    }
    Ok(report_from_rows(net.config.variant.to_string(), rows))
}

pub fn report_from_rows(variant: String, samples: Vec<SampleMetrics>) -> EvalReport {
    let collect = |f: fn(&SampleMetrics) -> Option<f64>| -> Vec<f64> {
        samples.iter().filter_map(f).collect()
    };
    let chamfer = MetricSummary::over(&collect(|r| r.chamfer));
    let dice = MetricSummary::over(&collect(|r| r.dice));
    let hausdorff = MetricSummary::over(&collect(|r| r.hausdorff));
    EvalReport {
        variant,
        samples,
        chamfer,
        dice,
        hausdorff,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "—".to_string(),
    }
}

impl EvalReport {
    /// One row per sample; metrics a variant lacks are written as "—".
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| {
            Error::io(path, std::io::Error::other(e.to_string()))
        })?;
        w.write_record(["id", "fold", "chamfer_mm", "dice", "hausdorff_mm"])
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        for r in &self.samples {
            w.write_record([
                r.id.to_string(),
                r.fold.to_string(),
                fmt_opt(r.chamfer),
                fmt_opt(r.dice),
                fmt_opt(r.hausdorff),
            ])
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
