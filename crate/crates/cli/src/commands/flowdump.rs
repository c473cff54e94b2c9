//! `flowdump`: write the argmax-affinity flow field between frame pairs
//! as raw tensors [2, hf, wf], displacements in pixels (dy then dx).

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use tcyc_core::propagate::{flow_and_warp, infer_features};
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::Tensor;

use crate::checkpoint;
use crate::formats;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of frame_NNNNN.ppm files.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gap between the source and target frame of each pair.
    #[arg(long, default_value_t = 1)]
    pub gap: usize,
}

pub fn run(a: Args) -> Result<()> {
    match checkpoint::peek_dtype(&a.checkpoint)? {
        Dtype::F64 => run_typed::<f64>(&a),
        Dtype::F32 => run_typed::<f32>(&a),
    }
}

fn run_typed<S: Scalar>(a: &Args) -> Result<()> {
    if a.gap == 0 {
        bail!("--gap must be at least 1");
    }
    let ck = checkpoint::load::<S>(&a.checkpoint)?;
    let frames: Vec<Tensor<S>> = formats::ingest_frames(&a.frames)?;
    if frames.len() <= a.gap {
        bail!("{} frames cannot form a pair {} apart", frames.len(), a.gap);
    }
    let features: Vec<Tensor<S>> = frames
        .par_iter()
        .map(|f| infer_features(&ck.model, f))
        .collect::<tcyc_core::Result<_>>()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for t in 0..frames.len() - a.gap {
        let fw = flow_and_warp(&features[t], &features[t + a.gap], &frames[t], &frames[t + a.gap])?;
        formats::write_raw_tensor(&a.out.join(format!("flow_{t:05}.raw")), &fw.flow)?;
    }
    println!("wrote {} flow fields to {}", frames.len() - a.gap, a.out.display());
    Ok(())
}
