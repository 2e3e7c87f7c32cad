//! Model variants: the joint reconstruct-and-segment network, the
//! point-cloud-only baselines, the mask-only U-Nets, and the ablations.

mod blocks;
mod config;
mod network;

pub use config::{ALL_VARIANTS, ModelConfig, SkipMode, Variant};
pub use network::{ForwardPass, Network};
