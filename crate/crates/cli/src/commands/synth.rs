//! `synth`: render synthetic clips to disk in the exact formats the other
//! subcommands consume, for inspection and for building eval fixtures.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use tcyc_core::synth::generate_clip;

use crate::config::parse_config;
use crate::formats;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of clips to render, one subdirectory each.
    #[arg(long, default_value_t = 1)]
    pub clips: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Clip j uses seed + j.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(a: Args) -> Result<()> {
    let mut cfg = parse_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    cfg.finalize()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.txt"), cfg.serialize())?;
    for j in 0..a.clips {
        let clip = generate_clip::<f64>(&cfg.synth, cfg.model.seed.wrapping_add(j as u64))?;
        let dir = a.out.join(format!("clip_{j:03}"));
        fs::create_dir_all(&dir)?;
        let mut track = String::from("frame,cx,cy,angle\n");
        for (t, frame) in clip.frames.iter().enumerate() {
            formats::write_ppm(&dir.join(format!("frame_{t:05}.ppm")), frame)?;
            let side = cfg.synth.image_side;
            formats::write_pgm(&dir.join(format!("mask_{t:05}.pgm")), &clip.masks[t], side, side)?;
            let p = clip.track[t];
            track.push_str(&format!("{t},{},{},{}\n", p.cx, p.cy, p.angle));
        }
        fs::write(dir.join("track.csv"), track)?;
    }
    println!("wrote {} clips to {}", a.clips, a.out.display());
    Ok(())
}
