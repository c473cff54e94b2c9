//! Differentiable patch tracker.
//!
//! One tracking step takes patch features and the feature plane of a target
//! frame, forms the affinity from every image position to every patch
//! position (softmax over image positions of feature inner products), reads
//! a pose (tx, ty, rotation, in normalized image coordinates) out of the
//! affinity volume with a small conv head, and bilinearly samples the image
//! feature plane at the posed patch grid. The sampled features are the
//! patch's appearance in the target frame; chaining steps tracks through
//! time, and every part is differentiable so cycle errors reach the encoder.

use crate::config::Config;
use crate::encoder::BoundModel;
use crate::error::Result;
use crate::scalar::{s, Scalar};
use crate::tensor::{Graph, Var};

/// Product of one tracking step.
#[derive(Clone, Copy, Debug)]
pub struct TrackOut {
    /// Features sampled at the predicted pose, [C, h_p, w_p].
    pub feats: Var,
    /// Predicted pose (tx, ty, rot), [3].
    pub theta: Var,
    /// Sampling grid of the predicted pose, [h_p * w_p, 2].
    pub grid: Var,
}

/// Affinity from image positions to patch positions: column i holds
/// softmax_j of the inner products between image feature j and patch
/// feature i. Output [N_image, N_patch], columns sum to one.
pub fn affinity<S: Scalar>(g: &mut Graph<S>, patch: Var, image: Var) -> Result<Var> {
    let logits = g.mat_tn(image, patch)?;
    g.softmax_columns(logits)
}

/// Read a pose out of an affinity volume. The affinity is reinterpreted as
/// an image: one channel per image position, spatial extent of the patch
/// grid; two 3x3 convs and a linear head produce (tx, ty, rot).
pub fn localize<S: Scalar>(
    g: &mut Graph<S>,
    bound: &BoundModel,
    aff: Var,
    h_p: usize,
    w_p: usize,
) -> Result<Var> {
    let shape = g.value(aff).shape().to_vec();
    let vol = g.reshape(aff, &[shape[0], h_p, w_p])?;
    let (w0, b0) = bound.loc0();
    let c0 = g.conv2d(vol, w0, b0, 1, 1)?;
    let r0 = g.relu(c0)?;
    let (w1, b1) = bound.loc1();
    let c1 = g.conv2d(r0, w1, b1, 1, 1)?;
    let r1 = g.relu(c1)?;
    let flat_len = g.value(r1).numel();
    let flat = g.reshape(r1, &[flat_len])?;
    let (wp, bp) = bound.pose();
    g.linear(flat, wp, bp)
}

/// One full tracking step of `patch` features against an `image` feature
/// plane of the configured training geometry.
pub fn track_step<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &Config,
    bound: &BoundModel,
    patch: Var,
    image: Var,
) -> Result<TrackOut> {
    let h_p = cfg.feature_side(cfg.patch_side);
    let aff = affinity(g, patch, image)?;
    let theta = localize(g, bound, aff, h_p, h_p)?;
    let grid = g.make_grid(theta, h_p, h_p, s(cfg.patch_scale()))?;
    let raw = g.bilinear_sample(image, grid, h_p, h_p)?;
    let feats = if cfg.renorm_sampled {
        g.l2_normalize_channels(raw, s(cfg.eps_norm))?
    } else {
        raw
    };
    Ok(TrackOut { feats, theta, grid })
}
