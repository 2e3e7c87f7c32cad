//! Joint 3D point-cloud reconstruction and segmentation of the left-ventricle
//! myocardium wall from volumetric images.
//!
//! The crate provides the full pipeline: synthetic phantom generation,
//! preprocessing (ROI crop, isotropic resampling, resize, intensity
//! normalization, elastic augmentation), mask-to-point-cloud shape extraction,
//! the PC-U network family with its baselines and ablations, Chamfer / soft
//! Dice training objectives, evaluation metrics (CD, Dice, HD), and a
//! cross-validation experiment harness with a CLI.
//!
//! Coordinate convention: dense grids are indexed `(x, y, z)` with `z`
//! fastest-varying in memory; world coordinates are millimeters under an
//! axis-aligned scaling + translation (no rotation).

pub mod anchors;
pub mod cloud;
pub mod error;
pub mod harness;
pub mod knn;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod shape;
pub mod synthetic;
pub mod volume;

pub use error::{Error, Result};
