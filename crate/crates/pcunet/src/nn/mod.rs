//! Minimal trainable layer stack: 3D/2D convolutions (im2col + GEMM),
//! fully connected layers, pointwise activations, nearest upsampling, pooling
//! and an Adam optimizer. All forward passes cache what their backward pass
//! needs; everything is f32 and strictly single-order deterministic.

pub mod adam;
pub mod conv;
pub mod linear;
pub mod ops;
pub mod param;

pub use adam::Adam;
pub use conv::Conv;
pub use linear::Linear;
pub use param::Param;
