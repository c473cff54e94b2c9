//! `eval`: score predictions against ground truth and print one JSON
//! object. Sections appear only when their inputs were given, so the same
//! command covers mask scoring, keypoint scoring and flow-warp probes.
//! Field order is fixed; identical inputs produce identical bytes.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tcyc_core::metrics::{metric_f, metric_j, metric_pck, RegionScore};
use tcyc_core::propagate::{flow_and_warp, infer_features};
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::Tensor;

use crate::checkpoint;
use crate::config::parse_config;
use crate::formats;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Predicted mask directory (mask_NNNNN.pgm), scored with --gt.
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Ground-truth mask directory.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Predicted keypoint directory (kp_NNNNN.csv), scored with --gt-kps.
    #[arg(long, requires_all = ["gt_kps", "norm_size"])]
    pub pred_kps: Option<PathBuf>,
    /// Ground-truth keypoint directory.
    #[arg(long, requires = "pred_kps")]
    pub gt_kps: Option<PathBuf>,
    /// PCK threshold fraction; defaults to the config value.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// PCK normalization size in pixels (object or image scale).
    #[arg(long)]
    pub norm_size: Option<f64>,
    /// Frame directory for the flow-warp probe; needs --checkpoint.
    #[arg(long, requires = "checkpoint")]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Frame gap of the flow-warp probe.
    #[arg(long, default_value_t = 5)]
    pub gap: usize,
    /// Boundary tolerance and pck_alpha overrides come from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Region {
    mean: f64,
    counted: usize,
    skipped: usize,
}

impl From<RegionScore> for Region {
    fn from(r: RegionScore) -> Self {
        Region {
            mean: r.mean,
            counted: r.counted,
            skipped: r.skipped,
        }
    }
}

#[derive(Serialize)]
struct Report {
    schema: u32,
    #[serde(rename = "J", skip_serializing_if = "Option::is_none")]
    j: Option<Region>,
    #[serde(rename = "F", skip_serializing_if = "Option::is_none")]
    f: Option<Region>,
    #[serde(rename = "PCK", skip_serializing_if = "Option::is_none")]
    pck: Option<f64>,
    #[serde(rename = "L1", skip_serializing_if = "Option::is_none")]
    l1: Option<f64>,
    #[serde(rename = "L1_identity", skip_serializing_if = "Option::is_none")]
    l1_identity: Option<f64>,
}

pub fn run(a: Args) -> Result<()> {
    let mut cfg = parse_config(a.config.as_deref())?;
    cfg.finalize()?;
    let mut report = Report {
        schema: 1,
        j: None,
        f: None,
        pck: None,
        l1: None,
        l1_identity: None,
    };

    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let (p, ps) = formats::ingest_masks(pred)?;
        let (g, gs) = formats::ingest_masks(gt)?;
        if ps != gs {
            bail!("predicted masks are {ps}x{ps}, ground truth {gs}x{gs}");
        }
        let n_classes = p
            .iter()
            .chain(g.iter())
            .flat_map(|m| m.iter().copied())
            .max()
            .unwrap_or(0) as usize
            + 1;
        report.j = Some(metric_j(&p, &g, n_classes)?.into());
        report.f = Some(metric_f(&p, &g, ps, n_classes, cfg.f_tolerance)?.into());
    }

    if let (Some(pred), Some(gt)) = (&a.pred_kps, &a.gt_kps) {
        let norm = a
            .norm_size
            .context("--norm-size is required for keypoint scoring")?;
        let alpha = a.alpha.unwrap_or(cfg.pck_alpha);
        let p = read_kp_dir(pred)?;
        let g = read_kp_dir(gt)?;
        report.pck = Some(metric_pck(&p, &g, alpha, norm)?);
    }

    if let (Some(frames), Some(ck)) = (&a.frames, &a.checkpoint) {
        let (l1, l1_id) = match checkpoint::peek_dtype(ck)? {
            Dtype::F64 => flow_probe::<f64>(ck, frames, a.gap)?,
            Dtype::F32 => flow_probe::<f32>(ck, frames, a.gap)?,
        };
        report.l1 = Some(l1);
        report.l1_identity = Some(l1_id);
    }

    let json = serde_json::to_string(&report)?;
    println!("{json}");
    if let Some(out) = &a.out {
        fs::write(out, format!("{json}\n"))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn read_kp_dir(dir: &PathBuf) -> Result<Vec<Vec<(f64, f64)>>> {
    let paths = formats::indexed_paths(dir, "kp_", ".csv")?;
    paths
        .iter()
        .map(|p| formats::read_keypoints(p).map(|(_, kps)| kps))
        .collect()
}

/// Mean flow-warp L1 over all frame pairs `gap` apart, next to the
/// no-motion baseline of comparing the raw frames directly.
fn flow_probe<S: Scalar>(ck: &PathBuf, frames_dir: &PathBuf, gap: usize) -> Result<(f64, f64)> {
    if gap == 0 {
        bail!("--gap must be at least 1");
    }
    let ck = checkpoint::load::<S>(ck)?;
    let frames: Vec<Tensor<S>> = formats::ingest_frames(frames_dir)?;
    if frames.len() <= gap {
        bail!("{} frames cannot form a pair {gap} apart", frames.len());
    }
    let features: Vec<Tensor<S>> = frames
        .par_iter()
        .map(|f| infer_features(&ck.model, f))
        .collect::<tcyc_core::Result<_>>()?;
    let mut l1 = 0.0;
    let mut l1_id = 0.0;
    let pairs = frames.len() - gap;
    for t in 0..pairs {
        let (s, tg) = (t, t + gap);
        let fw = flow_and_warp(&features[s], &features[tg], &frames[s], &frames[tg])?;
        l1 += fw.l1;
        let a = frames[s].data();
        let b = frames[tg].data();
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += (x.to_f64_lossy() - y.to_f64_lossy()).abs();
        }
        l1_id += acc / a.len() as f64 * 127.5;
    }
    Ok((l1 / pairs as f64, l1_id / pairs as f64))
}
