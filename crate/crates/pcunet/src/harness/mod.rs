//! Experiment harness: dataset loading, training, evaluation,
//! cross-validation, and the variant comparison matrix.

mod config;
mod cv;
mod dataset;
mod evaluate;
mod train;

pub use config::ExperimentConfig;
pub use cv::{combine_reports, cross_validate, run_matrix, CvReport, FoldResult, MatrixReport};
pub use dataset::{Dataset, Sample};
pub use evaluate::{evaluate, EvalReport, MetricSummary, SampleMetrics, MASK_THRESHOLD};
pub use train::{train, EpochStats, TrainReport};
