//! Self-supervised correspondence learning from synthetic video via temporal
//! cycle-consistency: a patch cropped from the last frame of a clip is tracked
//! backward and forward through time with a differentiable tracker, and the
//! deviation of the returned track from its start pose is the training signal.
//! Learned features are evaluated by propagating labels along frame-to-frame
//! affinities.
//!
//! The crate is `no_std` + `alloc`: it holds the math (autodiff engine,
//! encoder, tracker, losses, synthetic clips, propagation, metrics) and no IO.
//!
//! Coordinate convention, used identically everywhere: a feature grid or image
//! of side `n` spans normalized coordinates [-1, +1] edge to edge, so cell `j`
//! has its center at `-1 + (2j+1)/n`. A continuous pixel coordinate `x` in an
//! image of side `S` maps to `2x/S - 1`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod config;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod propagate;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::{Graph, Tensor, Var};

/// Continuous coordinate `x` in [0, side] mapped to normalized [-1, +1].
/// The center of pixel (or cell) `j` is the continuous coordinate `j + 0.5`.
pub fn to_norm(x: f64, side: usize) -> f64 {
    2.0 * x / side as f64 - 1.0
}

/// Inverse of [`to_norm`].
pub fn from_norm(x: f64, side: usize) -> f64 {
    (x + 1.0) * side as f64 / 2.0
}
