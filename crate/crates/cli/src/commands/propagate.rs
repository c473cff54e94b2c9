//! `propagate`: push frame-0 labels through a video with a trained
//! encoder. Frame 0's output is a verbatim copy of the input labels; the
//! label format is picked from the file extension.
//!
//! - `.pgm` class masks  -> `mask_NNNNN.pgm`
//! - `.csv` keypoints    -> `kp_NNNNN.csv`
//! - `.raw` label planes -> `label_NNNNN.raw`

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use tcyc_core::propagate::{
    decode_keypoints, decode_segmentation, infer_features, keypoint_labels, labels_from_mask,
    propagate_video, LabelKind, LabelMap, PropagationConfig,
};
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::synth::feature_stride;
use tcyc_core::Tensor;

use crate::checkpoint;
use crate::config::{config_diff, parse_config};
use crate::formats;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of frame_NNNNN.ppm files.
    #[arg(long)]
    pub frames: PathBuf,
    /// Frame-0 labels: .pgm mask, .csv keypoints or .raw label planes.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbours kept per target position.
    #[arg(long, alias = "knn-k")]
    pub knn: Option<usize>,
    /// Number of most recent reference frames.
    #[arg(long)]
    pub ref_window: Option<usize>,
    /// Cross-check against the checkpoint's embedded config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<()> {
    match checkpoint::peek_dtype(&a.checkpoint)? {
        Dtype::F64 => run_typed::<f64>(&a),
        Dtype::F32 => run_typed::<f32>(&a),
    }
}

fn run_typed<S: Scalar>(a: &Args) -> Result<()> {
    let ck = checkpoint::load::<S>(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let mut given = parse_config(Some(path))?;
        given.finalize()?;
        let diff = config_diff(&ck.config, &given);
        if !diff.is_empty() {
            bail!(
                "config {} disagrees with the checkpoint: {}",
                path.display(),
                diff.join(", ")
            );
        }
    }
    let mut cfg = ck.config.clone();
    if let Some(k) = a.knn {
        cfg.model.knn = k;
    }
    if let Some(w) = a.ref_window {
        cfg.model.ref_window = w;
    }

    let frames: Vec<Tensor<S>> = formats::ingest_frames(&a.frames)?;
    let stride = feature_stride(&cfg.model);
    let shape = frames[0].shape().to_vec();
    if shape[0] != cfg.model.in_channels {
        bail!(
            "frames have {} channels, the model wants {}",
            shape[0],
            cfg.model.in_channels
        );
    }
    if shape[1] != shape[2] || shape[1] % stride != 0 {
        bail!(
            "frames are {}x{}, need square with side a multiple of {stride}",
            shape[1],
            shape[2]
        );
    }
    let side = shape[1];
    let grid = side / stride;

    let features: Vec<Tensor<S>> = frames
        .par_iter()
        .map(|f| infer_features(&ck.model, f))
        .collect::<tcyc_core::Result<_>>()?;

    let pcfg = PropagationConfig {
        knn: cfg.model.knn,
        ref_window: cfg.model.ref_window,
        include_first_frame: cfg.include_first_frame,
        upsample: stride,
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ext = a
        .labels
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => {
            let (mask, w, h) = formats::read_pgm(&a.labels)?;
            if w != side || h != side {
                bail!("labels are {w}x{h}, frames are {side}x{side}");
            }
            let n_classes = mask.iter().copied().max().unwrap_or(0) as usize + 1;
            let first = labels_from_mask::<S>(&mask, side, n_classes.max(2), stride)?;
            let maps = propagate_video(&features, &first, &pcfg)?;
            copy_labels(&a.labels, &a.out.join("mask_00000.pgm"))?;
            for (t, map) in maps.iter().enumerate().skip(1) {
                let decoded = decode_segmentation(map, stride)?;
                formats::write_pgm(&a.out.join(format!("mask_{t:05}.pgm")), &decoded, side, side)?;
            }
        }
        "csv" => {
            let (names, kps) = formats::read_keypoints(&a.labels)?;
            if kps.is_empty() {
                bail!("{}: no keypoints", a.labels.display());
            }
            let first = keypoint_labels::<S>(&kps, side, stride)?;
            let maps = propagate_video(&features, &first, &pcfg)?;
            copy_labels(&a.labels, &a.out.join("kp_00000.csv"))?;
            for (t, map) in maps.iter().enumerate().skip(1) {
                let decoded = decode_keypoints(map, stride);
                formats::write_keypoints(&a.out.join(format!("kp_{t:05}.csv")), &names, &decoded)?;
            }
        }
        "raw" => {
            let t = formats::read_raw_tensor::<S>(&a.labels)?;
            if t.shape()[1] != grid || t.shape()[2] != grid {
                bail!(
                    "label planes are {}x{}, the feature grid is {grid}x{grid}",
                    t.shape()[1],
                    t.shape()[2]
                );
            }
            // Planes that already sit on the simplex propagate as
            // distributions, anything else as continuous channels.
            let first = LabelMap::new(t.clone(), LabelKind::Distribution)
                .or_else(|_| LabelMap::new(t, LabelKind::Continuous))?;
            let maps = propagate_video(&features, &first, &pcfg)?;
            copy_labels(&a.labels, &a.out.join("label_00000.raw"))?;
            for (t, map) in maps.iter().enumerate().skip(1) {
                formats::write_raw_tensor(&a.out.join(format!("label_{t:05}.raw")), &map.data)?;
            }
        }
        other => bail!(
            "{}: unsupported label extension {other:?} (want pgm, csv or raw)",
            a.labels.display()
        ),
    }
    println!(
        "propagated {} frames to {} (checkpoint step {})",
        frames.len(),
        a.out.display(),
        ck.step
    );
    Ok(())
}

fn copy_labels(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to)
        .map(|_| ())
        .with_context(|| format!("copying {} to {}", from.display(), to.display()))
}
