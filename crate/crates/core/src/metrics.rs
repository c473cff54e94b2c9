//! Segmentation and keypoint quality metrics: region IoU (J), boundary
//! F-measure, and percentage of correct keypoints.
//!
//! Masks are flat row-major class-id buffers over square frames. Class 0
//! is background; object classes are scored individually per frame.

// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Mean of per-object per-frame scores, with the number of contributing
/// terms and the number of terms skipped for lack of ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionScore {
    pub mean: f64,
    pub counted: usize,
    pub skipped: usize,
}

fn check_mask_pair(pred: &[Vec<u8>], gt: &[Vec<u8>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "metric",
            format!("{} predicted frames vs {} ground truth", pred.len(), gt.len()),
        ));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(
                "metric",
                format!("frame {t}: {} pixels vs {}", p.len(), g.len()),
            ));
        }
    }
    Ok(())
}

/// Mean intersection-over-union per object class per frame. Frames where
/// the ground truth lacks the class are skipped and reported.
pub fn metric_j(pred: &[Vec<u8>], gt: &[Vec<u8>], n_classes: usize) -> Result<RegionScore> {
    check_mask_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for cls in 1..n_classes as u8 {
            let mut inter = 0usize;
            let mut union = 0usize;
            let mut gt_any = false;
            for (pv, gv) in p.iter().zip(g) {
                let a = *pv == cls;
                let b = *gv == cls;
                gt_any |= b;
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            if !gt_any {
                skipped += 1;
                continue;
            }
            sum += inter as f64 / union as f64;
            counted += 1;
        }
    }
    Ok(RegionScore {
        mean: if counted > 0 { sum / counted as f64 } else { 0.0 },
        counted,
        skipped,
    })
}

/// Boundary pixels of a binary mask: mask pixels with a 4-neighbor outside
/// the mask. Out-of-image counts as outside, so frame-edge mask pixels are
/// boundary.
fn boundary(mask: &[u8], side: usize, cls: u8) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..side {
        for x in 0..side {
            if mask[y * side + x] != cls {
                continue;
            }
            let inside = |yy: isize, xx: isize| -> bool {
                yy >= 0
                    && xx >= 0
                    && (yy as usize) < side
                    && (xx as usize) < side
                    && mask[yy as usize * side + xx as usize] == cls
            };
            let (yi, xi) = (y as isize, x as isize);
            if !(inside(yi - 1, xi) && inside(yi + 1, xi) && inside(yi, xi - 1) && inside(yi, xi + 1))
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn matched_fraction(from: &[(usize, usize)], to: &[(usize, usize)], tol: f64) -> f64 {
    let t2 = tol * tol;
    let mut hit = 0usize;
    for &(y, x) in from {
        let ok = to.iter().any(|&(gy, gx)| {
            let dy = y as f64 - gy as f64;
            let dx = x as f64 - gx as f64;
            dy * dy + dx * dx <= t2
        });
        hit += ok as usize;
    }
    hit as f64 / from.len() as f64
}

/// Mean boundary F-measure per object class per frame. A boundary pixel
/// matches if an opposite-set boundary pixel lies within Euclidean
/// distance `tol`. Both boundaries empty scores 1, exactly one empty
/// scores 0.
pub fn metric_f(
    pred: &[Vec<u8>],
    gt: &[Vec<u8>],
    side: usize,
    n_classes: usize,
    tol: f64,
) -> Result<RegionScore> {
    check_mask_pair(pred, gt)?;
    for (t, p) in pred.iter().enumerate() {
        if p.len() != side * side {
            return Err(Error::shape(
                "metric_f",
                format!("frame {t} has {} pixels, expected {}", p.len(), side * side),
            ));
        }
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::invalid("metric_f", format!("tolerance {tol}")));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for cls in 1..n_classes as u8 {
            let pb = boundary(p, side, cls);
            let gb = boundary(g, side, cls);
            let f = match (pb.is_empty(), gb.is_empty()) {
                (true, true) => 1.0,
                (true, false) | (false, true) => 0.0,
                (false, false) => {
                    let precision = matched_fraction(&pb, &gb, tol);
                    let recall = matched_fraction(&gb, &pb, tol);
                    if precision + recall > 0.0 {
                        2.0 * precision * recall / (precision + recall)
                    } else {
                        0.0
                    }
                }
            };
            sum += f;
            counted += 1;
        }
    }
    Ok(RegionScore {
        mean: if counted > 0 { sum / counted as f64 } else { 0.0 },
        counted,
        skipped: 0,
    })
}

/// Fraction of keypoints within `alpha * norm_size` of the ground truth,
/// over all frames and keypoints.
pub fn metric_pck(
    pred: &[Vec<(f64, f64)>],
    gt: &[Vec<(f64, f64)>],
    alpha: f64,
    norm_size: f64,
) -> Result<f64> {
    if !(norm_size > 0.0 && norm_size.is_finite()) {
        return Err(Error::invalid("metric_pck", format!("norm_size {norm_size}")));
    }
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "metric_pck",
            format!("{} predicted frames vs {}", pred.len(), gt.len()),
        ));
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(
                "metric_pck",
                format!("frame {t}: {} keypoints vs {}", p.len(), g.len()),
            ));
        }
        for (&(px, py), &(gx, gy)) in p.iter().zip(g) {
            let d = ((px - gx) * (px - gx) + (py - gy) * (py - gy)).sqrt();
            hit += (d <= alpha * norm_size) as usize;
            total += 1;
        }
    }
    Ok(if total > 0 { hit as f64 / total as f64 } else { 0.0 })
}
