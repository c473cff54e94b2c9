//! Synthetic training clips: a textured square moving over a textured
//! background, optionally rotating, optionally crossed by an occluder.
//!
//! Rendering is deliberately simple and exact: positions are rounded to
//! whole pixels unless rotation is on, textures are blocky noise whose cell
//! size roughly matches the encoder's receptive field, and every frame comes
//! with a per-pixel class mask (0 background, 1 object, 2 occluder) and the
//! object's true pose. Tests and evaluation lean on that exactness.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_OBJECT: u8 = 1;
pub const CLASS_OCCLUDER: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_side: usize,
    pub object_side: usize,
    pub clip_len: usize,
    /// Maximum object speed in pixels per frame, per axis.
    pub max_speed: f64,
    /// Rotate the object; positions are then no longer pixel-aligned.
    pub rotate: bool,
    /// Maximum rotation speed in radians per frame.
    pub max_spin: f64,
    pub occluder: bool,
    pub occluder_side: usize,
    /// Texture granularity in pixels.
    pub cell_px: usize,
    pub in_channels: usize,
    /// The object center stays at least this far from every border, all
    /// frames; also the room left for patch crops around the object.
    pub margin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_side: 96,
            object_side: 24,
            clip_len: 5,
            max_speed: 6.0,
            rotate: false,
            max_spin: 0.08,
            occluder: false,
            occluder_side: 20,
            cell_px: 4,
            in_channels: 3,
            margin: 18,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |d| Err(Error::invalid("synth", d));
        if self.clip_len < 2 {
            return fail(format!("clip_len must be at least 2"));
        }
        if self.object_side < 4 || self.object_side >= self.image_side {
            return fail(format!(
                "object_side {} out of range for image {}",
                self.object_side, self.image_side
            ));
        }
        if 2 * self.margin >= self.image_side {
            return fail(format!("margin {} too large", self.margin));
        }
        if 2 * self.margin < self.object_side {
            return fail(format!(
                "margin {} must cover half the object ({})",
                self.margin, self.object_side
            ));
        }
        let travel = self.max_speed * (self.clip_len - 1) as f64;
        if travel > (self.image_side - 2 * self.margin) as f64 {
            return fail(format!(
                "max_speed {} travels beyond the margin box over {} frames",
                self.max_speed, self.clip_len
            ));
        }
        if self.cell_px == 0 || self.in_channels == 0 {
            return fail(format!("cell_px and in_channels must be positive"));
        }
        Ok(())
    }
}

/// Object pose in one frame: center in pixel coordinates, angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjPose {
    pub cx: f64,
    pub cy: f64,
    pub angle: f64,
}

#[derive(Clone, Debug)]
pub struct Clip<S> {
    /// clip_len frames of [in_channels, side, side], values in [-1, 1].
    pub frames: Vec<Tensor<S>>,
    /// Class id per pixel, row-major, one per frame.
    pub masks: Vec<Vec<u8>>,
    /// True object pose per frame.
    pub track: Vec<ObjPose>,
    pub object_side: usize,
}

/// Blocky noise texture in [-1, 1]: independent value per channel per cell.
fn texture<S: Scalar>(rng: &mut Rng, c: usize, side: usize, cell: usize) -> Tensor<S> {
    let cells = side.div_ceil(cell);
    let mut values = vec![0.0f64; c * cells * cells];
    for v in values.iter_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }
    let mut t = Tensor::zeros(&[c, side, side]);
    for ch in 0..c {
        for y in 0..side {
            for x in 0..side {
                let idx = ch * cells * cells + (y / cell) * cells + x / cell;
                t.set3(ch, y, x, s(values[idx]));
            }
        }
    }
    t
}

/// Straight-line track through the margin box; pixel-rounded unless
/// rotation is on.
pub fn sample_track(cfg: &SynthConfig, rng: &mut Rng) -> Vec<ObjPose> {
    let frames = cfg.clip_len as f64 - 1.0;
    let side = cfg.image_side as f64;
    let m = cfg.margin as f64;
    let mut axis = |speed: f64| -> (f64, f64) {
        let v: f64 = rng.uniform(-speed, speed);
        let lo = m + (-v * frames).max(0.0);
        let hi = side - m - (v * frames).max(0.0);
        (rng.uniform(lo, hi), v)
    };
    let (x0, vx) = axis(cfg.max_speed);
    let (y0, vy) = axis(cfg.max_speed);
    let spin = if cfg.rotate {
        rng.uniform(-cfg.max_spin, cfg.max_spin)
    } else {
        0.0
    };
    let a0 = if cfg.rotate {
        rng.uniform(-0.5, 0.5)
    } else {
        0.0
    };
    (0..cfg.clip_len)
        .map(|t| {
            let t = t as f64;
            let (mut cx, mut cy) = (x0 + vx * t, y0 + vy * t);
            if !cfg.rotate {
                cx = cx.round();
                cy = cy.round();
            }
            ObjPose {
                cx,
                cy,
                angle: a0 + spin * t,
            }
        })
        .collect()
}

/// Bilinear read of a texture with clamped coordinates.
fn tex_read<S: Scalar>(tex: &Tensor<S>, ch: usize, y: f64, x: f64) -> f64 {
    let side = tex.shape()[1] as isize;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |yy: isize, xx: isize| -> f64 {
        let yy = yy.clamp(0, side - 1) as usize;
        let xx = xx.clamp(0, side - 1) as usize;
        tex.at3(ch, yy, xx).to_f64_lossy()
    };
    let (xi, yi) = (x0 as isize, y0 as isize);
    let a = at(yi, xi) * (1.0 - fx) + at(yi, xi + 1) * fx;
    let b = at(yi + 1, xi) * (1.0 - fx) + at(yi + 1, xi + 1) * fx;
    a * (1.0 - fy) + b * fy
}

/// Stamp a textured square of side `os` posed at `pose` into `frame`,
/// writing `class` into `mask` where it lands.
fn stamp<S: Scalar>(
    frame: &mut Tensor<S>,
    mask: &mut [u8],
    tex: &Tensor<S>,
    pose: ObjPose,
    os: usize,
    class: u8,
) {
    let side = frame.shape()[1];
    let half = os as f64 / 2.0;
    let c = frame.shape()[0];
    if pose.angle == 0.0 {
        // Axis-aligned fast path: integer stamp when the corner is integral.
        let top = pose.cy - half;
        let left = pose.cx - half;
        if top.fract() == 0.0 && left.fract() == 0.0 {
            let (top, left) = (top as isize, left as isize);
            for ty in 0..os {
                for tx in 0..os {
                    let (y, x) = (top + ty as isize, left + tx as isize);
                    if y < 0 || x < 0 || y >= side as isize || x >= side as isize {
                        continue;
                    }
                    let (y, x) = (y as usize, x as usize);
                    for ch in 0..c {
                        let v = tex.at3(ch, ty, tx);
                        frame.set3(ch, y, x, v);
                    }
                    mask[y * side + x] = class;
                }
            }
            return;
        }
    }
    // General path: inverse-map each pixel in the bounding box.
    let (sin, cos) = pose.angle.sin_cos();
    let r = half * 2f64.sqrt() + 1.0;
    let y_lo = ((pose.cy - r).floor().max(0.0)) as usize;
    let y_hi = ((pose.cy + r).ceil().min(side as f64 - 1.0)) as usize;
    let x_lo = ((pose.cx - r).floor().max(0.0)) as usize;
    let x_hi = ((pose.cx + r).ceil().min(side as f64 - 1.0)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = (x as f64 + 0.5) - pose.cx;
            let dy = (y as f64 + 0.5) - pose.cy;
            // Rotate back into the object frame.
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            if u.abs() >= half || v.abs() >= half {
                continue;
            }
            for ch in 0..c {
                let val = tex_read(tex, ch, v + half - 0.5, u + half - 0.5);
                frame.set3(ch, y, x, s(val));
            }
            mask[y * side + x] = class;
        }
    }
}

/// Render frames, masks and ground truth for an explicit object track.
/// Textures (and the occluder path, if any) are drawn from `rng`.
pub fn render_clip<S: Scalar>(cfg: &SynthConfig, rng: &mut Rng, track: &[ObjPose]) -> Clip<S> {
    let side = cfg.image_side;
    let bg = texture::<S>(rng, cfg.in_channels, side, cfg.cell_px);
    let obj = texture::<S>(rng, cfg.in_channels, cfg.object_side, cfg.cell_px);
    let (occ_tex, occ_track) = if cfg.occluder {
        let tex = texture::<S>(rng, cfg.in_channels, cfg.occluder_side, cfg.cell_px);
        // Cross the object's path: meet it mid-clip and move against it.
        let mid = track.len() / 2;
        let m = track[mid];
        let dx: f64 = rng.uniform(-4.0, 4.0);
        let dy: f64 = rng.uniform(-4.0, 4.0);
        let (vx, vy) = (
            track[track.len() - 1].cx - track[0].cx,
            track[track.len() - 1].cy - track[0].cy,
        );
        let steps = (track.len() - 1).max(1) as f64;
        let (ovx, ovy) = (-vx / steps, -vy / steps);
        let occ: Vec<ObjPose> = (0..track.len())
            .map(|t| ObjPose {
                cx: (m.cx + dx + ovx * (t as f64 - mid as f64)).round(),
                cy: (m.cy + dy + ovy * (t as f64 - mid as f64)).round(),
                angle: 0.0,
            })
            .collect();
        (Some(tex), occ)
    } else {
        (None, Vec::new())
    };

    let mut frames = Vec::with_capacity(track.len());
    let mut masks = Vec::with_capacity(track.len());
    for (t, pose) in track.iter().enumerate() {
        let mut frame = bg.clone();
        let mut mask = vec![CLASS_BACKGROUND; side * side];
        stamp(&mut frame, &mut mask, &obj, *pose, cfg.object_side, CLASS_OBJECT);
        if let Some(tex) = &occ_tex {
            stamp(
                &mut frame,
                &mut mask,
                tex,
                occ_track[t],
                cfg.occluder_side,
                CLASS_OCCLUDER,
            );
        }
        frames.push(frame);
        masks.push(mask);
    }
    Clip {
        frames,
        masks,
        track: track.to_vec(),
        object_side: cfg.object_side,
    }
}

/// Sample a track and render it. Deterministic in (cfg, seed).
pub fn generate_clip<S: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<Clip<S>> {
    cfg.validate()?;
    let mut rng = Rng::seed(seed);
    let track = sample_track(cfg, &mut rng);
    Ok(render_clip(cfg, &mut rng, &track))
}

/// Exact pixel crop of [c, side, side] at integer origin (oy, ox).
pub fn crop<S: Scalar>(frame: &Tensor<S>, oy: usize, ox: usize, side: usize) -> Result<Tensor<S>> {
    let shape = frame.shape();
    if shape.len() != 3 || oy + side > shape[1] || ox + side > shape[2] {
        return Err(Error::shape(
            "crop",
            format!("crop {side} at ({oy}, {ox}) exceeds {shape:?}"),
        ));
    }
    let mut out = Tensor::zeros(&[shape[0], side, side]);
    for ch in 0..shape[0] {
        for y in 0..side {
            for x in 0..side {
                out.set3(ch, y, x, frame.at3(ch, oy + y, ox + x));
            }
        }
    }
    Ok(out)
}

/// Pose theta* of a patch cropped at integer origin (oy, ox): the patch
/// center in normalized image coordinates, no rotation.
pub fn crop_pose<S: Scalar>(cfg: &Config, oy: usize, ox: usize) -> Tensor<S> {
    let cx = crate::to_norm(ox as f64 + cfg.patch_side as f64 / 2.0, cfg.image_side);
    let cy = crate::to_norm(oy as f64 + cfg.patch_side as f64 / 2.0, cfg.image_side);
    Tensor::from_vec(&[3], vec![s(cx), s(cy), S::zero()]).unwrap()
}

/// Feature-stride step of the encoder (pixels per feature cell).
pub fn feature_stride(cfg: &Config) -> usize {
    1 << cfg.channels.len()
}

/// Random stride-aligned crop origin with at least `patch_side / 4` pixels
/// kept from every border. Alignment makes the target grid of theta* land
/// exactly on feature cell centers.
pub fn sample_aligned_origin(cfg: &Config, rng: &mut Rng) -> (usize, usize) {
    let stride = feature_stride(cfg);
    let margin = cfg.patch_side / 4;
    let lo = margin.div_ceil(stride);
    let hi = (cfg.image_side - cfg.patch_side - margin) / stride;
    let pick = |rng: &mut Rng| stride * (lo + rng.below(hi - lo + 1));
    let oy = pick(rng);
    let ox = pick(rng);
    (oy, ox)
}

/// Stride-aligned crop origin closest to centering the patch on `pose`,
/// clamped into the image.
pub fn aligned_origin_near(cfg: &Config, pose: ObjPose) -> (usize, usize) {
    let stride = feature_stride(cfg) as f64;
    let max_o = (cfg.image_side - cfg.patch_side) as f64;
    let snap = |center: f64| -> usize {
        let o = (center - cfg.patch_side as f64 / 2.0).clamp(0.0, max_o);
        ((o / stride).round() * stride).clamp(0.0, max_o) as usize
    };
    (snap(pose.cy), snap(pose.cx))
}
