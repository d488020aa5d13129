//! Differentiable 2D primitives with hand-written backward passes.
//!
//! Every function here is pure. Backward functions take the forward inputs
//! plus the upstream gradient and return (or accumulate) the input gradients.

mod activation;
mod concat;
mod conv;
mod upsample;
mod warp;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_backward_in_place, leaky_relu_in_place};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv2d_backward_raw, conv2d_raw, ConvGrads, ConvShape, KERNEL};
pub use upsample::{upsample2x, upsample2x_backward};
pub use warp::{sample_bilinear, warp_bilinear, warp_bilinear_backward};
