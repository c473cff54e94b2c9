//! Runtime configuration. One flat struct covers architecture, loss,
//! optimizer, training schedule, and label propagation so that a checkpoint
//! can embed the exact settings it was trained with.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Dtype;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Input image side in pixels; square images only.
    pub image_side: usize,
    /// Query patch side in pixels; the image side must be 3x this.
    pub patch_side: usize,
    /// Output channels of the encoder stages; each stage halves the side.
    pub channels: Vec<usize>,
    /// Embedding dimension; must equal the last entry of `channels`.
    pub feature_dim: usize,
    /// Channels of the two localizer conv layers.
    pub localizer_channels: usize,
    /// Input image channels.
    pub in_channels: usize,
    /// Floor for l2 normalization denominators.
    pub eps_norm: f64,

    /// Longest cycle: losses are summed for i = 1..=k.
    pub k: usize,
    /// Weight of the skip and long cycle terms relative to similarity.
    pub lambda: f64,
    pub enable_sim: bool,
    pub enable_skip: bool,
    pub enable_long: bool,
    /// Skip the long term at i = 1, where it equals the skip term node for
    /// node. Off by default: the total then matches the written objective.
    pub dedup_unit_cycle: bool,
    /// Re-normalize tracked features between chain steps.
    pub renorm_sampled: bool,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Emit a loss CSV row every this many steps (step 0 always logs).
    pub log_every: usize,
    /// Write a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub dtype: Dtype,

    /// Neighbors kept per query position during label propagation.
    pub knn: usize,
    /// Reference frames: this many most recent plus the first frame.
    pub ref_window: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            image_side: 96,
            patch_side: 32,
            channels: vec![32, 64, 64],
            feature_dim: 64,
            localizer_channels: 64,
            in_channels: 3,
            eps_norm: 1e-12,
            k: 4,
            lambda: 0.1,
            enable_sim: true,
            enable_skip: true,
            enable_long: true,
            dedup_unit_cycle: false,
            renorm_sampled: false,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            steps: 2000,
            seed: 0,
            log_every: 10,
            checkpoint_every: 500,
            dtype: Dtype::F64,
            knn: 5,
            ref_window: 7,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::invalid("config", d));
        if self.channels.is_empty() {
            return fail(format!("channels must be non-empty"));
        }
        if self.image_side != 3 * self.patch_side {
            return fail(format!(
                "image_side {} must be 3 * patch_side {}",
                self.image_side, self.patch_side
            ));
        }
        let div = 1usize << self.channels.len();
        if self.patch_side % div != 0 || self.patch_side == 0 {
            return fail(format!(
                "patch_side {} must be a positive multiple of {div} ({} stages)",
                self.patch_side,
                self.channels.len()
            ));
        }
        if self.feature_dim != *self.channels.last().unwrap() {
            return fail(format!(
                "feature_dim {} must equal the last channel count {}",
                self.feature_dim,
                self.channels.last().unwrap()
            ));
        }
        if self.localizer_channels == 0 || self.in_channels == 0 {
            return fail(format!("channel counts must be positive"));
        }
        if !(self.eps_norm > 0.0) {
            return fail(format!("eps_norm must be positive, got {}", self.eps_norm));
        }
        if self.k == 0 {
            return fail(format!("k must be at least 1"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.batch_size == 0 {
            return fail(format!("batch_size must be at least 1"));
        }
        if self.log_every == 0 {
            return fail(format!("log_every must be at least 1"));
        }
        if self.knn == 0 {
            return fail(format!("knn must be at least 1"));
        }
        if self.ref_window == 0 {
            return fail(format!("ref_window must be at least 1"));
        }
        Ok(())
    }

    /// Side of the feature grid for an input of `side` pixels.
    pub fn feature_side(&self, side: usize) -> usize {
        side >> self.channels.len()
    }

    /// Patch extent as a fraction of the image, in normalized units.
    pub fn patch_scale(&self) -> f64 {
        self.patch_side as f64 / self.image_side as f64
    }

    /// Frames needed per training clip: the anchor plus k history frames.
    pub fn clip_len(&self) -> usize {
        self.k + 1
    }
}
