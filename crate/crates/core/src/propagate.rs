//! Test-time label propagation: frame-to-frame affinity, top-k
//! nearest-neighbor transport of per-position label distributions,
//! reference-frame averaging, decoding, and flow-based warping.
//!
//! Labels live at feature resolution. A segmentation map is a per-position
//! distribution over classes (sums to 1); keypoint heatmaps and texture
//! maps are continuous channels with no simplex invariant. The first
//! frame's map seeds the video and is never overwritten.

// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Graph, Tensor};

/// Whether a label map is a per-position class distribution or a free
/// continuous signal (keypoint heatmaps, texture).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Distribution,
    Continuous,
}

/// Per-position labels at feature resolution, shape [channels, h, w].
#[derive(Clone, Debug)]
pub struct LabelMap<S> {
    pub data: Tensor<S>,
    pub kind: LabelKind,
}

impl<S: Scalar> LabelMap<S> {
    /// Validates shape and, for distributions, the simplex invariant:
    /// entries nonnegative and each position summing to 1 within 1e-6.
    pub fn new(data: Tensor<S>, kind: LabelKind) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::shape(
                "label_map",
                format!("expected [channels, h, w], got {:?}", data.shape()),
            ));
        }
        let m = Self { data, kind };
        if kind == LabelKind::Distribution {
            m.check_simplex()?;
        }
        Ok(m)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn positions(&self) -> usize {
        self.data.shape()[1] * self.data.shape()[2]
    }

    fn check_simplex(&self) -> Result<()> {
        let (l, n) = (self.channels(), self.positions());
        let d = self.data.data();
        for i in 0..n {
            let mut sum = 0.0;
            for c in 0..l {
                let v = d[c * n + i].to_f64_lossy();
                if v < 0.0 {
                    return Err(Error::invalid(
                        "label_map",
                        format!("negative label {v} at channel {c} position {i}"),
                    ));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "label_map",
                    format!("position {i} sums to {sum}, expected 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Reference-set and neighborhood settings for video propagation.
#[derive(Clone, Copy, Debug)]
pub struct PropagationConfig {
    /// Neighbors kept per target position before renormalizing.
    pub knn: usize,
    /// How many most-recent frames serve as references.
    pub ref_window: usize,
    /// Always include the first frame as a reference.
    pub include_first_frame: bool,
    /// Feature-to-pixel upsampling factor for decoding.
    pub upsample: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            knn: 5,
            ref_window: 7,
            include_first_frame: true,
            upsample: 8,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn == 0 || self.ref_window == 0 || self.upsample == 0 {
            return Err(Error::invalid(
                "propagation_config",
                format!(
                    "knn {}, ref_window {}, upsample {} must all be >= 1",
                    self.knn, self.ref_window, self.upsample
                ),
            ));
        }
        Ok(())
    }
}

/// Encoder features of one frame, no gradients retained.
pub fn infer_features<S: Scalar>(model: &Model<S>, frame: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::<S>::new();
    let bound = model.bind(&mut g, false);
    let x = g.constant(frame.clone());
    let f = model.encode(&mut g, &bound, x)?;
    Ok(g.value(f).clone())
}

/// Affinity from a source frame to a target frame: column i is a softmax
/// distribution over source positions for target position i. Shape
/// [n_src, n_tgt].
pub fn frame_affinity<S: Scalar>(feat_src: &Tensor<S>, feat_tgt: &Tensor<S>) -> Result<Tensor<S>> {
    if feat_src.shape().len() != 3 || feat_src.shape() != feat_tgt.shape() {
        return Err(Error::shape(
            "frame_affinity",
            format!(
                "feature geometries differ: {:?} vs {:?}",
                feat_src.shape(),
                feat_tgt.shape()
            ),
        ));
    }
    let c = feat_src.shape()[0];
    let n = feat_src.shape()[1] * feat_src.shape()[2];
    let mut logits = vec![S::of_f64(0.0); n * n];
    kernels::mm_tn(feat_src.data(), feat_tgt.data(), n, c, n, &mut logits);
    let mut out = vec![S::of_f64(0.0); n * n];
    kernels::softmax_columns(&logits, n, n, &mut out);
    Tensor::from_vec(&[n, n], out)
}

/// Keep the `knn` largest weights per column (ties to the lowest source
/// index), renormalize them to sum 1, and transport the source labels.
pub fn knn_propagate<S: Scalar>(
    a: &Tensor<S>,
    labels_src: &LabelMap<S>,
    knn: usize,
) -> Result<LabelMap<S>> {
    if a.shape().len() != 2 {
        return Err(Error::shape(
            "knn_propagate",
            format!("affinity must be [n_src, n_tgt], got {:?}", a.shape()),
        ));
    }
    let (n_src, n_tgt) = (a.shape()[0], a.shape()[1]);
    if labels_src.positions() != n_src {
        return Err(Error::shape(
            "knn_propagate",
            format!(
                "labels cover {} positions, affinity has {n_src} source rows",
                labels_src.positions()
            ),
        ));
    }
    if n_tgt != n_src {
        return Err(Error::shape(
            "knn_propagate",
            format!("square geometry expected, got {n_src} sources for {n_tgt} targets"),
        ));
    }
    if knn == 0 || knn > n_src {
        return Err(Error::invalid(
            "knn_propagate",
            format!("knn {knn} outside 1..={n_src}"),
        ));
    }
    if !a.is_finite() {
        return Err(Error::non_finite("knn_propagate", "affinity".into()));
    }
    let l = labels_src.channels();
    let (h, w) = (labels_src.data.shape()[1], labels_src.data.shape()[2]);
    let ad = a.data();
    let ld = labels_src.data.data();
    let mut out = vec![S::of_f64(0.0); l * n_tgt];
    let mut order: Vec<usize> = Vec::with_capacity(n_src);
    for i in 0..n_tgt {
        order.clear();
        order.extend(0..n_src);
        order.sort_unstable_by(|&x, &y| {
            ad[y * n_tgt + i]
                .partial_cmp(&ad[x * n_tgt + i])
                .unwrap()
                .then(x.cmp(&y))
        });
        let top = &order[..knn];
        let mut sum = S::of_f64(0.0);
        for &j in top {
            sum += ad[j * n_tgt + i];
        }
        if sum.to_f64_lossy() <= 0.0 {
            continue;
        }
        for &j in top {
            let wgt = ad[j * n_tgt + i] / sum;
            for cl in 0..l {
                out[cl * n_tgt + i] += wgt * ld[cl * n_src + j];
            }
        }
    }
    Ok(LabelMap {
        data: Tensor::from_vec(&[l, h, w], out)?,
        kind: labels_src.kind,
    })
}

/// Reference frame indices for target frame `t`: up to `ref_window` most
/// recent frames plus (optionally) frame 0, ascending and deduplicated.
pub fn reference_frames(t: usize, cfg: &PropagationConfig) -> Vec<usize> {
    let mut refs: Vec<usize> = Vec::new();
    if cfg.include_first_frame {
        refs.push(0);
    }
    for r in t.saturating_sub(cfg.ref_window)..t {
        if !(cfg.include_first_frame && r == 0) {
            refs.push(r);
        }
    }
    refs
}

/// Propagate the first frame's labels through the whole video. Frame t
/// receives the average of independent propagations from each reference.
pub fn propagate_video<S: Scalar>(
    features: &[Tensor<S>],
    first_labels: &LabelMap<S>,
    cfg: &PropagationConfig,
) -> Result<Vec<LabelMap<S>>> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::invalid("propagate_video", "no frames".into()));
    }
    if first_labels.kind == LabelKind::Distribution {
        first_labels.check_simplex()?;
    }
    let mut maps: Vec<LabelMap<S>> = Vec::with_capacity(features.len());
    maps.push(first_labels.clone());
    for t in 1..features.len() {
        let refs = reference_frames(t, cfg);
        let l = first_labels.channels();
        let (h, w) = (
            first_labels.data.shape()[1],
            first_labels.data.shape()[2],
        );
        let mut acc = vec![S::of_f64(0.0); l * h * w];
        for &r in &refs {
            let a = frame_affinity(&features[r], &features[t])?;
            let y = knn_propagate(&a, &maps[r], cfg.knn)?;
            for (o, v) in acc.iter_mut().zip(y.data.data()) {
                *o += *v;
            }
        }
        let inv = S::of_f64(1.0 / refs.len() as f64);
        for o in acc.iter_mut() {
            *o *= inv;
        }
        maps.push(LabelMap {
            data: Tensor::from_vec(&[l, h, w], acc)?,
            kind: first_labels.kind,
        });
    }
    Ok(maps)
}

/// Upsample to pixel resolution and take the per-pixel argmax class.
/// Ties break toward the lowest class id. Returns side = h * factor.
pub fn decode_segmentation<S: Scalar>(map: &LabelMap<S>, factor: usize) -> Result<Vec<u8>> {
    if map.kind != LabelKind::Distribution {
        return Err(Error::invalid(
            "decode_segmentation",
            "continuous label maps cannot be decoded as segmentation".into(),
        ));
    }
    if map.channels() > u8::MAX as usize + 1 {
        return Err(Error::invalid(
            "decode_segmentation",
            format!("{} classes exceed u8 ids", map.channels()),
        ));
    }
    let (l, h, w) = (map.channels(), map.data.shape()[1], map.data.shape()[2]);
    let up = kernels::upsample_bilinear(map.data.data(), l, h, w, factor);
    let (hh, ww) = (h * factor, w * factor);
    let mut out = vec![0u8; hh * ww];
    for p in 0..hh * ww {
        let mut best = 0usize;
        let mut best_v = up[p];
        for c in 1..l {
            let v = up[c * hh * ww + p];
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        out[p] = best as u8;
    }
    Ok(out)
}

/// Per-channel peak position mapped to pixel coordinates (x, y) at the
/// center of the winning feature cell. Ties break toward the lowest
/// linear index.
pub fn decode_keypoints<S: Scalar>(map: &LabelMap<S>, factor: usize) -> Vec<(f64, f64)> {
    let (l, n) = (map.channels(), map.positions());
    let w = map.data.shape()[2];
    let d = map.data.data();
    let mut out = Vec::with_capacity(l);
    for c in 0..l {
        let mut best = 0usize;
        let mut best_v = d[c * n];
        for i in 1..n {
            let v = d[c * n + i];
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        let (r, col) = (best / w, best % w);
        out.push((
            (col as f64 + 0.5) * factor as f64,
            (r as f64 + 0.5) * factor as f64,
        ));
    }
    out
}

/// Downsample a pixel class-id mask to a per-position class distribution:
/// each feature cell averages the one-hot labels of its factor x factor
/// pixel block.
pub fn labels_from_mask<S: Scalar>(
    mask: &[u8],
    side: usize,
    n_classes: usize,
    factor: usize,
) -> Result<LabelMap<S>> {
    if factor == 0 || side % factor != 0 {
        return Err(Error::invalid(
            "labels_from_mask",
            format!("factor {factor} does not divide side {side}"),
        ));
    }
    if mask.len() != side * side {
        return Err(Error::shape(
            "labels_from_mask",
            format!("mask has {} pixels, expected {}", mask.len(), side * side),
        ));
    }
    let f = side / factor;
    let n = f * f;
    let mut data = vec![S::of_f64(0.0); n_classes * n];
    let inv = S::of_f64(1.0 / (factor * factor) as f64);
    for y in 0..side {
        for x in 0..side {
            let cls = mask[y * side + x] as usize;
            if cls >= n_classes {
                return Err(Error::invalid(
                    "labels_from_mask",
                    format!("class id {cls} at ({y},{x}) >= n_classes {n_classes}"),
                ));
            }
            let cell = (y / factor) * f + (x / factor);
            data[cls * n + cell] += inv;
        }
    }
    LabelMap::new(Tensor::from_vec(&[n_classes, f, f], data)?, LabelKind::Distribution)
}

/// One-hot keypoint heatmaps at feature resolution from pixel coordinates.
pub fn keypoint_labels<S: Scalar>(
    kps: &[(f64, f64)],
    side: usize,
    factor: usize,
) -> Result<LabelMap<S>> {
    if factor == 0 || side % factor != 0 {
        return Err(Error::invalid(
            "keypoint_labels",
            format!("factor {factor} does not divide side {side}"),
        ));
    }
    let f = side / factor;
    let n = f * f;
    let mut data = vec![S::of_f64(0.0); kps.len() * n];
    for (c, &(x, y)) in kps.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x >= side as f64 || y >= side as f64 {
            return Err(Error::invalid(
                "keypoint_labels",
                format!("keypoint {c} at ({x},{y}) outside [0,{side})"),
            ));
        }
        let (cx, cy) = ((x as usize / factor).min(f - 1), (y as usize / factor).min(f - 1));
        data[c * n + cy * f + cx] = S::of_f64(1.0);
    }
    LabelMap::new(Tensor::from_vec(&[kps.len(), f, f], data)?, LabelKind::Continuous)
}

/// Result of flow estimation and backward warping. `flow` holds pixel
/// displacements (dy, dx channels) at feature resolution; `recon` is the
/// source image warped onto the target; `l1` is the mean absolute error
/// against the target on the 0-255 scale.
#[derive(Clone, Debug)]
pub struct FlowWarp<S> {
    pub flow: Tensor<S>,
    pub recon: Tensor<S>,
    pub l1: f64,
}

fn read_clamped<S: Scalar>(img: &[S], h: usize, w: usize, ch: usize, y: f64, x: f64) -> S {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = S::of_f64(y - y0);
    let fx = S::of_f64(x - x0);
    let cl = |v: f64, hi: usize| -> usize {
        if v < 0.0 {
            0
        } else if v as usize >= hi {
            hi - 1
        } else {
            v as usize
        }
    };
    let (r0, r1) = (cl(y0, h), cl(y0 + 1.0, h));
    let (c0, c1) = (cl(x0, w), cl(x0 + 1.0, w));
    let one = S::of_f64(1.0);
    let at = |r: usize, cc: usize| img[ch * h * w + r * w + cc];
    (one - fy) * ((one - fx) * at(r0, c0) + fx * at(r0, c1))
        + fy * ((one - fx) * at(r1, c0) + fx * at(r1, c1))
}

/// Per target cell, flow points at the argmax-affinity source cell. The
/// flow field is upsampled to pixel resolution and used to backward-warp
/// the source image onto the target's pixel grid.
pub fn flow_and_warp<S: Scalar>(
    feat_s: &Tensor<S>,
    feat_t: &Tensor<S>,
    image_s: &Tensor<S>,
    image_t: &Tensor<S>,
) -> Result<FlowWarp<S>> {
    let a = frame_affinity(feat_s, feat_t)?;
    if image_s.shape() != image_t.shape() || image_s.shape().len() != 3 {
        return Err(Error::shape(
            "flow_and_warp",
            format!(
                "image shapes differ: {:?} vs {:?}",
                image_s.shape(),
                image_t.shape()
            ),
        ));
    }
    let (hf, wf) = (feat_s.shape()[1], feat_s.shape()[2]);
    let (c, hh, ww) = (image_s.shape()[0], image_s.shape()[1], image_s.shape()[2]);
    if hh % hf != 0 || ww % wf != 0 || hh / hf != ww / wf {
        return Err(Error::shape(
            "flow_and_warp",
            format!("image {hh}x{ww} is not an integer multiple of feature grid {hf}x{wf}"),
        ));
    }
    let factor = hh / hf;
    let n = hf * wf;
    let ad = a.data();
    let mut flow = vec![S::of_f64(0.0); 2 * n];
    for i in 0..n {
        let mut best = 0usize;
        let mut best_v = ad[i];
        for j in 1..n {
            let v = ad[j * n + i];
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        let (ti, tj) = (i / wf, i % wf);
        let (si, sj) = (best / wf, best % wf);
        flow[i] = S::of_f64((si as f64 - ti as f64) * factor as f64);
        flow[n + i] = S::of_f64((sj as f64 - tj as f64) * factor as f64);
    }
    let flow_px = kernels::upsample_bilinear(&flow, 2, hf, wf, factor);
    let src = image_s.data();
    let tgt = image_t.data();
    let mut recon = vec![S::of_f64(0.0); c * hh * ww];
    let mut l1 = 0.0;
    for y in 0..hh {
        for x in 0..ww {
            let p = y * ww + x;
            let dy = flow_px[p].to_f64_lossy();
            let dx = flow_px[hh * ww + p].to_f64_lossy();
            for ch in 0..c {
                let v = read_clamped(src, hh, ww, ch, y as f64 + dy, x as f64 + dx);
                recon[ch * hh * ww + p] = v;
                l1 += (v.to_f64_lossy() - tgt[ch * hh * ww + p].to_f64_lossy()).abs();
            }
        }
    }
    l1 = l1 / (c * hh * ww) as f64 * 127.5;
    Ok(FlowWarp {
        flow: Tensor::from_vec(&[2, hf, wf], flow)?,
        recon: Tensor::from_vec(&[c, hh, ww], recon)?,
        l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::seed(seed);
        let raw: Vec<f64> = (0..c * h * w).map(|_| rng.normal(0.0, 1.0)).collect();
        let mut out = vec![0.0; c * h * w];
        kernels::l2_normalize_channels(&raw, c, h * w, 1e-12, &mut out);
        Tensor::from_vec(&[c, h, w], out).unwrap()
    }

    /// Position-coded features: channel j is 1 exactly at position j.
    fn identity_features(h: usize, w: usize) -> Tensor<f64> {
        let n = h * w;
        let mut d = vec![0.0; n * n];
        for j in 0..n {
            d[j * n + j] = 1.0;
        }
        Tensor::from_vec(&[n, h, w], d).unwrap()
    }

    #[test]
    fn affinity_rejects_geometry_mismatch() {
        let s = random_features(6, 3, 3, 1);
        let t = random_features(6, 3, 4, 2);
        assert!(frame_affinity(&s, &t).is_err());
    }

    #[test]
    fn affinity_is_column_stochastic() {
        let s = random_features(6, 3, 3, 1);
        let t = random_features(6, 3, 3, 2);
        let a = frame_affinity(&s, &t).unwrap();
        let n = 9;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = a.data()[j * n + i];
                assert!(v > 0.0);
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_frames_with_position_codes_argmax_self() {
        let f = identity_features(3, 3);
        let a = frame_affinity(&f, &f).unwrap();
        let n = 9;
        for i in 0..n {
            let mut best = 0;
            let mut best_v = f64::MIN;
            for j in 0..n {
                if a.data()[j * n + i] > best_v {
                    best_v = a.data()[j * n + i];
                    best = j;
                }
            }
            assert_eq!(best, i);
        }
    }

    #[test]
    fn permuting_source_positions_permutes_rows() {
        let s = random_features(5, 2, 2, 3);
        let t = random_features(5, 2, 2, 4);
        let a = frame_affinity(&s, &t).unwrap();
        // Swap source positions 1 and 2 (columns of the [C, N] feature view).
        let mut swapped = s.clone();
        let n = 4;
        for c in 0..5 {
            swapped.data_mut().swap(c * n + 1, c * n + 2);
        }
        let b = frame_affinity(&swapped, &t).unwrap();
        // The softmax denominator is summed in row order, so permuted rows
        // can differ in the last ulp; compare with a tight tolerance.
        let close = |x: f64, y: f64| (x - y).abs() < 1e-14;
        for i in 0..n {
            assert!(close(a.data()[n + i], b.data()[2 * n + i]));
            assert!(close(a.data()[2 * n + i], b.data()[n + i]));
            assert!(close(a.data()[i], b.data()[i]));
            assert!(close(a.data()[3 * n + i], b.data()[3 * n + i]));
        }
    }

    fn uniform_labels(l: usize, h: usize, w: usize) -> LabelMap<f64> {
        let n = h * w;
        let v = 1.0 / l as f64;
        LabelMap::new(
            Tensor::from_vec(&[l, h, w], vec![v; l * n]).unwrap(),
            LabelKind::Distribution,
        )
        .unwrap()
    }

    #[test]
    fn knn_propagate_preserves_simplex_and_copies_onehot() {
        let f = identity_features(2, 2);
        let a = frame_affinity(&f, &f).unwrap();
        // Labels: position p gets class p, 4 classes one-hot.
        let mut d = vec![0.0; 16];
        for p in 0..4 {
            d[p * 4 + p] = 1.0;
        }
        let labels =
            LabelMap::new(Tensor::from_vec(&[4, 2, 2], d).unwrap(), LabelKind::Distribution)
                .unwrap();
        let y = knn_propagate(&a, &labels, 1).unwrap();
        // knn=1 picks the diagonal argmax, so labels come back exactly.
        assert_eq!(y.data.data(), labels.data.data());
        let y5 = knn_propagate(&a, &labels, 4).unwrap();
        for i in 0..4 {
            let s: f64 = (0..4).map(|c| y5.data.data()[c * 4 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_topk_weights_average_source_labels() {
        // Uniform affinity: every column has all weights equal, so top-k
        // ties resolve to the k lowest indices with equal renormalized
        // weight 1/k.
        let n = 4;
        let a = Tensor::from_vec(&[n, n], vec![0.25; n * n]).unwrap();
        let mut d = vec![0.0; 2 * n];
        d[0] = 1.0; // pos 0 class 0
        d[1] = 1.0; // pos 1 class 0
        d[n + 2] = 1.0; // pos 2 class 1
        d[n + 3] = 1.0; // pos 3 class 1
        let labels =
            LabelMap::new(Tensor::from_vec(&[2, 2, 2], d).unwrap(), LabelKind::Distribution)
                .unwrap();
        let y = knn_propagate(&a, &labels, 2).unwrap();
        // Lowest two indices are positions 0 and 1, both class 0.
        for i in 0..n {
            assert!((y.data.data()[i] - 1.0).abs() < 1e-12);
            assert!(y.data.data()[n + i].abs() < 1e-12);
        }
        let y_all = knn_propagate(&a, &labels, 4).unwrap();
        for i in 0..n {
            assert!((y_all.data.data()[i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_propagate_rejects_oversized_k() {
        let f = identity_features(2, 2);
        let a = frame_affinity(&f, &f).unwrap();
        let labels = uniform_labels(3, 2, 2);
        assert!(knn_propagate(&a, &labels, 5).is_err());
        assert!(knn_propagate(&a, &labels, 0).is_err());
    }

    #[test]
    fn reference_sets_follow_the_window() {
        let cfg = PropagationConfig {
            ref_window: 3,
            include_first_frame: true,
            ..PropagationConfig::default()
        };
        assert_eq!(reference_frames(1, &cfg), vec![0]);
        assert_eq!(reference_frames(2, &cfg), vec![0, 1]);
        assert_eq!(reference_frames(5, &cfg), vec![0, 2, 3, 4]);
        let chain = PropagationConfig {
            ref_window: 1,
            include_first_frame: false,
            ..PropagationConfig::default()
        };
        assert_eq!(reference_frames(5, &chain), vec![4]);
    }

    #[test]
    fn static_video_keeps_first_frame_labels() {
        let f = identity_features(2, 2);
        let frames = vec![f.clone(), f.clone(), f.clone(), f];
        let mut d = vec![0.0; 8];
        d[0] = 1.0;
        d[1] = 1.0;
        d[4 + 2] = 1.0;
        d[4 + 3] = 1.0;
        let first =
            LabelMap::new(Tensor::from_vec(&[2, 2, 2], d).unwrap(), LabelKind::Distribution)
                .unwrap();
        let cfg = PropagationConfig {
            knn: 1,
            ..PropagationConfig::default()
        };
        let maps = propagate_video(&frames, &first, &cfg).unwrap();
        assert_eq!(maps.len(), 4);
        for m in &maps {
            assert_eq!(m.data.data(), first.data.data());
        }
    }

    #[test]
    fn class_relabeling_commutes_with_propagation() {
        // knn = all positions and a window covering every frame: permuting
        // label channels before propagating equals permuting after.
        let frames = vec![
            random_features(6, 2, 2, 10),
            random_features(6, 2, 2, 11),
            random_features(6, 2, 2, 12),
        ];
        let mut d = vec![0.0; 12];
        for p in 0..4 {
            d[(p % 3) * 4 + p] = 1.0;
        }
        let first =
            LabelMap::new(Tensor::from_vec(&[3, 2, 2], d).unwrap(), LabelKind::Distribution)
                .unwrap();
        let cfg = PropagationConfig {
            knn: 4,
            ref_window: 3,
            ..PropagationConfig::default()
        };
        let maps = propagate_video(&frames, &first, &cfg).unwrap();
        // Relabel classes by the cycle 0->1->2->0.
        let perm = [1usize, 2, 0];
        let mut pd = vec![0.0; 12];
        for c in 0..3 {
            for p in 0..4 {
                pd[perm[c] * 4 + p] = first.data.data()[c * 4 + p];
            }
        }
        let pfirst =
            LabelMap::new(Tensor::from_vec(&[3, 2, 2], pd).unwrap(), LabelKind::Distribution)
                .unwrap();
        let pmaps = propagate_video(&frames, &pfirst, &cfg).unwrap();
        for (m, pm) in maps.iter().zip(&pmaps) {
            for c in 0..3 {
                for p in 0..4 {
                    let a = m.data.data()[c * 4 + p];
                    let b = pm.data.data()[perm[c] * 4 + p];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn segmentation_decode_is_block_constant_for_onehot() {
        let mut d = vec![0.0; 8];
        d[0] = 1.0;
        d[1] = 1.0;
        d[4 + 2] = 1.0;
        d[4 + 3] = 1.0;
        let m = LabelMap::new(Tensor::from_vec(&[2, 2, 2], d).unwrap(), LabelKind::Distribution)
            .unwrap();
        let seg = decode_segmentation(&m, 4).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if y < 4 { 0 } else { 1 };
                assert_eq!(seg[y * 8 + x], expect, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn uniform_distribution_decodes_to_class_zero() {
        let m = uniform_labels(3, 2, 2);
        let seg = decode_segmentation(&m, 2).unwrap();
        assert!(seg.iter().all(|&v| v == 0));
    }

    #[test]
    fn continuous_maps_cannot_decode_as_segmentation() {
        let m = LabelMap::new(
            Tensor::from_vec(&[1, 2, 2], vec![0.3; 4]).unwrap(),
            LabelKind::Continuous,
        )
        .unwrap();
        assert!(decode_segmentation(&m, 2).is_err());
    }

    #[test]
    fn keypoint_decode_lands_on_cell_centers() {
        let mut d = vec![0.0; 9];
        d[1 * 3 + 2] = 1.0; // row 1, col 2
        let m = LabelMap::new(
            Tensor::from_vec(&[1, 3, 3], d).unwrap(),
            LabelKind::Continuous,
        )
        .unwrap();
        let kps = decode_keypoints(&m, 8);
        assert_eq!(kps, vec![(2.5 * 8.0, 1.5 * 8.0)]);
    }

    #[test]
    fn mask_roundtrip_through_labels() {
        // 8x8 mask, factor 4: left half class 0, right half class 1.
        let side = 8;
        let mut mask = vec![0u8; side * side];
        for y in 0..side {
            for x in 4..side {
                mask[y * side + x] = 1;
            }
        }
        let m = labels_from_mask::<f64>(&mask, side, 2, 4).unwrap();
        assert_eq!(m.data.shape(), &[2, 2, 2]);
        let seg = decode_segmentation(&m, 4).unwrap();
        assert_eq!(seg, mask);
        // Mixed block: fractions, still a distribution.
        mask[0] = 1;
        let m2 = labels_from_mask::<f64>(&mask, side, 2, 4).unwrap();
        assert!((m2.data.data()[0] - 15.0 / 16.0).abs() < 1e-12);
        assert!((m2.data.data()[4] - 1.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn keypoint_labels_mark_the_containing_cell() {
        let m = keypoint_labels::<f64>(&[(9.0, 2.0)], 16, 8).unwrap();
        assert_eq!(m.kind, LabelKind::Continuous);
        assert_eq!(m.data.shape(), &[1, 2, 2]);
        assert_eq!(m.data.data(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(keypoint_labels::<f64>(&[(16.0, 0.0)], 16, 8).is_err());
    }

    #[test]
    fn identical_features_and_images_give_zero_flow_and_l1() {
        let f = identity_features(2, 2);
        let img = random_features(3, 8, 8, 20);
        let out = flow_and_warp(&f, &f, &img, &img).unwrap();
        assert!(out.flow.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.recon.data(), img.data());
        assert_eq!(out.l1, 0.0);
    }

    #[test]
    fn one_cell_shift_flow_matches_construction() {
        // Source features are the target features shifted one column right:
        // target content at column j sits at column j+1 in the source.
        let n = 9;
        let t = identity_features(3, 3);
        let mut sd = vec![0.0; n * n];
        for r in 0..3 {
            for c in 0..3 {
                let src_pos = r * 3 + ((c + 1) % 3);
                let code = r * 3 + c;
                sd[code * n + src_pos] = 1.0;
            }
        }
        let s = Tensor::from_vec(&[n, 3, 3], sd).unwrap();
        let img = random_features(1, 12, 12, 21);
        let out = flow_and_warp(&s, &t, &img, &img).unwrap();
        for i in 0..n {
            let dy = out.flow.data()[i];
            let dx = out.flow.data()[n + i];
            assert_eq!(dy, 0.0);
            let col = i % 3;
            let expect = if col == 2 { -2.0 * 4.0 } else { 4.0 };
            assert_eq!(dx, expect, "cell {i}");
        }
    }

    #[test]
    fn oracle_flow_beats_identity_on_translation() {
        // Build a target image as the source shifted 4 px right, with
        // position-coded features shifted accordingly. The warp must
        // reconstruct better than copying the source.
        let side = 12;
        let mut rng = Rng::seed(22);
        let src_img: Vec<f64> = (0..side * side).map(|_| rng.uniform::<f64>(-1.0, 1.0)).collect();
        let mut tgt_img = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let sx = if x >= 4 { x - 4 } else { 0 };
                tgt_img[y * side + x] = src_img[y * side + sx];
            }
        }
        let n = 9;
        let t = identity_features(3, 3);
        // Target cell (r,c) content lives at source cell (r,c-1).
        let mut sd = vec![0.0; n * n];
        for r in 0..3usize {
            for c in 0..3usize {
                let code = r * 3 + c;
                let src_pos = r * 3 + c.saturating_sub(1);
                sd[code * n + src_pos] += 1.0;
            }
        }
        // Feature columns must stay unit-ish; duplicates at c=0 are fine
        // for argmax purposes.
        let s = Tensor::from_vec(&[n, 3, 3], sd).unwrap();
        let src_t = Tensor::from_vec(&[1, side, side], src_img.clone()).unwrap();
        let tgt_t = Tensor::from_vec(&[1, side, side], tgt_img.clone()).unwrap();
        let out = flow_and_warp(&s, &t, &src_t, &tgt_t).unwrap();
        let identity_l1: f64 = src_img
            .iter()
            .zip(&tgt_img)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / (side * side) as f64
            * 127.5;
        assert!(
            out.l1 < identity_l1,
            "warp {} vs identity {identity_l1}",
            out.l1
        );
    }
}
