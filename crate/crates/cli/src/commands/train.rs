//! `train`: optimize a fresh model on synthetic clips and leave behind
//! checkpoints, a loss curve and the effective config.
//!
//! The loss CSV holds one row per `log_every` steps plus a row 0 with the
//! untrained loss of the first batch, so the file always shows the
//! trajectory from the true starting point. The loss logged at step s is
//! the pre-update loss of the batch consumed by step s; with identical
//! configs the whole output directory reproduces byte for byte.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use tcyc_core::encoder::Model;
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::train::{adam_for, apply_batch, batch_seeds, clip_loss_grads, LossValues};

use crate::checkpoint;
use crate::config::{parse_config, RunConfig};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Config file of key=value lines; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints, loss curve and config echo.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Train without the two-step skip cycles (ablation).
    #[arg(long)]
    pub no_skip_cycle: bool,
}

pub fn run(a: Args) -> Result<()> {
    let mut cfg = parse_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.model.steps = s;
    }
    if a.no_skip_cycle {
        cfg.model.enable_skip = false;
    }
    cfg.finalize()?;
    match cfg.model.dtype {
        Dtype::F64 => train_run::<f64>(&cfg, &a.out),
        Dtype::F32 => train_run::<f32>(&cfg, &a.out),
    }
}

fn csv_row(step: usize, l: &LossValues) -> String {
    format!("{step},{},{},{},{}\n", l.total, l.sim, l.skip, l.long)
}

/// Losses of one batch without touching the model, for the step-0 row.
fn eval_batch<S: Scalar>(model: &Model<S>, cfg: &RunConfig, step: usize) -> Result<LossValues> {
    let seeds = batch_seeds(&cfg.model, step);
    let batch: Vec<LossValues> = seeds
        .par_iter()
        .map(|&s| clip_loss_grads(model, &cfg.synth, s).map(|(v, _)| v))
        .collect::<tcyc_core::Result<_>>()?;
    Ok(LossValues::mean(&batch))
}

pub fn train_run<S: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = cfg.serialize();
    print!("{text}");
    fs::write(out.join("config.txt"), &text)?;

    let mcfg = &cfg.model;
    let mut model = Model::<S>::new(mcfg.clone(), mcfg.seed)?;
    let mut adam = adam_for(&model);

    let mut csv = fs::File::create(out.join("loss.csv"))?;
    csv.write_all(b"step,total,sim,skip,long\n")?;
    let initial = eval_batch(&model, cfg, 0)?;
    csv.write_all(csv_row(0, &initial).as_bytes())?;
    csv.flush()?;
    println!("step 0 total {} sim {} skip {} long {}", initial.total, initial.sim, initial.skip, initial.long);

    let ckpt_path = |step: usize| out.join(format!("ckpt_{step:06}.tcyc"));
    checkpoint::save(&ckpt_path(0), 0, cfg, &model, &adam)?;

    for step in 0..mcfg.steps {
        let seeds = batch_seeds(mcfg, step);
        let batch: Vec<(LossValues, Vec<tcyc_core::Tensor<S>>)> = seeds
            .par_iter()
            .map(|&s| clip_loss_grads(&model, &cfg.synth, s))
            .collect::<tcyc_core::Result<_>>()?;
        let losses = apply_batch(&mut model, &mut adam, &batch)?;
        let done = step + 1;
        if done % mcfg.log_every == 0 {
            csv.write_all(csv_row(done, &losses).as_bytes())?;
            csv.flush()?;
            println!(
                "step {done} total {} sim {} skip {} long {}",
                losses.total, losses.sim, losses.skip, losses.long
            );
        }
        if mcfg.checkpoint_every > 0 && done % mcfg.checkpoint_every == 0 && done != mcfg.steps {
            checkpoint::save(&ckpt_path(done), done as u64, cfg, &model, &adam)?;
        }
    }
    if mcfg.steps > 0 {
        checkpoint::save(&ckpt_path(mcfg.steps), mcfg.steps as u64, cfg, &model, &adam)?;
    }
    Ok(())
}
