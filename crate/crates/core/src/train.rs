//! Training steps: synthesize clips, build the cycle loss, average
//! gradients over the batch, and apply Adam.
//!
//! `clip_loss_grads` is pure in (&model, seed), so batches can be computed
//! clip by clip in any order or in parallel; `apply_batch` folds gradients
//! in clip index order, which keeps results bit-identical regardless of
//! how the per-clip work was scheduled.

use alloc::format;
use alloc::vec::Vec;

use crate::config::Config;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::loss::cycle_loss;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::synth::{self, SynthConfig};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};
use crate::tracker::track_step;

/// Evaluated loss components of one clip or one batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossValues {
    pub total: f64,
    pub sim: f64,
    pub skip: f64,
    pub long: f64,
}

impl LossValues {
    pub fn mean(of: &[LossValues]) -> LossValues {
        let n = of.len().max(1) as f64;
        let mut m = LossValues::default();
        for v in of {
            m.total += v.total;
            m.sim += v.sim;
            m.skip += v.skip;
            m.long += v.long;
        }
        m.total /= n;
        m.sim /= n;
        m.skip /= n;
        m.long /= n;
        m
    }
}

/// Check that the synthesis settings can feed the model.
pub fn validate_pair(cfg: &Config, synth: &SynthConfig) -> Result<()> {
    cfg.validate()?;
    synth.validate()?;
    if synth.image_side != cfg.image_side || synth.in_channels != cfg.in_channels {
        return Err(Error::invalid(
            "train",
            format!(
                "synth geometry {}x{} channels {} does not match model {}x{} channels {}",
                synth.image_side,
                synth.image_side,
                synth.in_channels,
                cfg.image_side,
                cfg.image_side,
                cfg.in_channels
            ),
        ));
    }
    if synth.clip_len < cfg.clip_len() {
        return Err(Error::invalid(
            "train",
            format!(
                "clip_len {} shorter than the k + 1 = {} frames training needs",
                synth.clip_len,
                cfg.clip_len()
            ),
        ));
    }
    Ok(())
}

/// Loss and parameter gradients of one synthetic clip. The patch is a
/// uniform random stride-aligned crop of the last frame (margin of a
/// quarter patch from the borders). Deterministic in (model, configs,
/// seed); does not mutate the model.
pub fn clip_loss_grads<S: Scalar>(
    model: &Model<S>,
    synth_cfg: &SynthConfig,
    seed: u64,
) -> Result<(LossValues, Vec<Tensor<S>>)> {
    let cfg = model.cfg().clone();
    let clip = synth::generate_clip::<S>(synth_cfg, seed)?;
    // Separate stream for patch choice so synthesis stays reusable.
    let mut patch_rng = Rng::seed(seed ^ 0x9E37_79B9_7F4A_7C15);
    let (oy, ox) = synth::sample_aligned_origin(&cfg, &mut patch_rng);

    let mut g = Graph::<S>::new();
    let bound = model.bind(&mut g, true);
    let anchor_idx = clip.frames.len() - 1;
    let anchor_img = g.constant(clip.frames[anchor_idx].clone());
    let anchor = model.encode(&mut g, &bound, anchor_img)?;
    // history[j] is frame t-(j+1).
    let mut history = Vec::with_capacity(cfg.k);
    for j in 1..=cfg.k {
        let img = g.constant(clip.frames[anchor_idx - j].clone());
        history.push(model.encode(&mut g, &bound, img)?);
    }
    let patch_img = synth::crop(&clip.frames[anchor_idx], oy, ox, cfg.patch_side)?;
    let patch_var = g.constant(patch_img);
    let patch = model.encode(&mut g, &bound, patch_var)?;
    let theta_star = g.constant(synth::crop_pose(&cfg, oy, ox));

    let lv = cycle_loss(&mut g, &cfg, patch, &history, anchor, theta_star, |g, q, f| {
        track_step(g, &cfg, &bound, q, f)
    })?;
    let values = LossValues {
        total: g.item(lv.total).to_f64_lossy(),
        sim: g.item(lv.sim).to_f64_lossy(),
        skip: g.item(lv.skip).to_f64_lossy(),
        long: g.item(lv.long).to_f64_lossy(),
    };
    if !values.total.is_finite() {
        return Err(Error::non_finite(
            "clip_loss_grads",
            format!(
                "clip seed {seed}: total {} (sim {} skip {} long {})",
                values.total, values.sim, values.skip, values.long
            ),
        ));
    }
    g.backward(lv.total)?;
    Ok((values, bound.grads(&g)))
}

/// Adam optimizer matching the model's training hyperparameters.
pub fn adam_for<S: Scalar>(model: &Model<S>) -> Adam<S> {
    let cfg = model.cfg();
    Adam::new(
        AdamConfig {
            lr: S::of_f64(cfg.lr),
            beta1: S::of_f64(cfg.beta1),
            beta2: S::of_f64(cfg.beta2),
            eps: S::of_f64(cfg.adam_eps),
        },
        model.params(),
    )
}

/// Clip seeds of one batch step.
pub fn batch_seeds(cfg: &Config, step: usize) -> Vec<u64> {
    (0..cfg.batch_size)
        .map(|j| cfg.seed.wrapping_add((step * cfg.batch_size + j) as u64))
        .collect()
}

/// Average per-clip gradients in clip order and take one Adam step.
pub fn apply_batch<S: Scalar>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    batch: &[(LossValues, Vec<Tensor<S>>)],
) -> Result<LossValues> {
    if batch.is_empty() {
        return Err(Error::invalid("apply_batch", "empty batch".into()));
    }
    let n_params = model.params().len();
    let mut mean: Vec<Tensor<S>> = (0..n_params)
        .map(|p| Tensor::zeros(model.params().get(p).value.shape()))
        .collect();
    let inv = S::of_f64(1.0 / batch.len() as f64);
    for (_, grads) in batch {
        if grads.len() != n_params {
            return Err(Error::invalid(
                "apply_batch",
                format!("gradient count {} != parameter count {n_params}", grads.len()),
            ));
        }
        for (m, gt) in mean.iter_mut().zip(grads) {
            for (o, v) in m.data_mut().iter_mut().zip(gt.data()) {
                *o += *v * inv;
            }
        }
    }
    adam.step(model.params_mut(), &mean)?;
    let values: Vec<LossValues> = batch.iter().map(|(v, _)| *v).collect();
    Ok(LossValues::mean(&values))
}

/// One full training step: batch of clips, averaged gradients, Adam.
/// With every loss term disabled the step is a no-op on parameters and
/// optimizer state.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    synth_cfg: &SynthConfig,
    step: usize,
) -> Result<LossValues> {
    let seeds = batch_seeds(model.cfg(), step);
    let mut batch = Vec::with_capacity(seeds.len());
    for seed in seeds {
        batch.push(clip_loss_grads(model, synth_cfg, seed)?);
    }
    let cfg = model.cfg();
    if !(cfg.enable_sim || cfg.enable_skip || cfg.enable_long) {
        let values: Vec<LossValues> = batch.iter().map(|(v, _)| *v).collect();
        return Ok(LossValues::mean(&values));
    }
    apply_batch(model, adam, &batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub fn tiny_pair() -> (Config, SynthConfig) {
        let cfg = Config {
            image_side: 24,
            patch_side: 8,
            channels: vec![8, 8],
            feature_dim: 8,
            localizer_channels: 4,
            k: 2,
            batch_size: 2,
            ..Config::default()
        };
        let synth = SynthConfig {
            image_side: 24,
            object_side: 8,
            clip_len: 3,
            max_speed: 2.0,
            margin: 8,
            ..SynthConfig::default()
        };
        (cfg, synth)
    }

    #[test]
    fn pair_validation_catches_mismatches() {
        let (cfg, mut synth) = tiny_pair();
        validate_pair(&cfg, &synth).unwrap();
        synth.image_side = 48;
        assert!(validate_pair(&cfg, &synth).is_err());
        let (cfg2, mut synth) = tiny_pair();
        synth.clip_len = 2;
        assert!(validate_pair(&cfg2, &synth).is_err());
    }

    #[test]
    fn clip_gradients_reach_the_encoder() {
        let (cfg, synth) = tiny_pair();
        let model = Model::<f64>::new(cfg, 1).unwrap();
        let (values, grads) = clip_loss_grads(&model, &synth, 5).unwrap();
        assert!(values.total.is_finite());
        // sim pulls features together from step one; encoder weights must
        // receive signal even with the pose head at zero.
        let enc_grad_norm: f64 = grads[0].data().iter().map(|v| v * v).sum();
        assert!(enc_grad_norm > 0.0);
    }

    #[test]
    fn train_step_equals_manual_batch_mean() {
        let (cfg, synth) = tiny_pair();
        let mut a = Model::<f64>::new(cfg.clone(), 3).unwrap();
        let mut b = Model::<f64>::new(cfg.clone(), 3).unwrap();
        let mut adam_a = adam_for(&a);
        let mut adam_b = adam_for(&b);

        train_step(&mut a, &mut adam_a, &synth, 0).unwrap();

        let batch: Vec<_> = batch_seeds(&cfg, 0)
            .into_iter()
            .map(|s| clip_loss_grads(&b, &synth, s).unwrap())
            .collect();
        apply_batch(&mut b, &mut adam_b, &batch).unwrap();

        for p in 0..a.params().len() {
            assert_eq!(
                a.params().get(p).value.data(),
                b.params().get(p).value.data(),
                "param {}",
                a.params().get(p).name
            );
        }
    }

    #[test]
    fn training_is_deterministic_across_runs() {
        let (cfg, synth) = tiny_pair();
        let run = || {
            let mut m = Model::<f64>::new(cfg.clone(), 7).unwrap();
            let mut adam = adam_for(&m);
            let mut last = LossValues::default();
            for step in 0..3 {
                last = train_step(&mut m, &mut adam, &synth, step).unwrap();
            }
            (m, last)
        };
        let (ma, la) = run();
        let (mb, lb) = run();
        assert_eq!(la.total.to_bits(), lb.total.to_bits());
        for p in 0..ma.params().len() {
            assert_eq!(ma.params().get(p).value.data(), mb.params().get(p).value.data());
        }
    }

    #[test]
    fn disabled_loss_terms_leave_model_and_optimizer_unchanged() {
        let (mut cfg, synth) = tiny_pair();
        cfg.enable_sim = false;
        cfg.enable_skip = false;
        cfg.enable_long = false;
        let mut m = Model::<f64>::new(cfg, 11).unwrap();
        let before: Vec<Vec<f64>> = (0..m.params().len())
            .map(|p| m.params().get(p).value.data().to_vec())
            .collect();
        let mut adam = adam_for(&m);
        let lv = train_step(&mut m, &mut adam, &synth, 0).unwrap();
        assert_eq!(lv.total, 0.0);
        assert_eq!(adam.step_count(), 0);
        for p in 0..m.params().len() {
            assert_eq!(m.params().get(p).value.data(), &before[p][..]);
        }
    }

    #[test]
    fn batch_seeds_are_disjoint_across_steps() {
        let (cfg, _) = tiny_pair();
        let s0 = batch_seeds(&cfg, 0);
        let s1 = batch_seeds(&cfg, 1);
        assert_eq!(s0.len(), cfg.batch_size);
        for s in &s1 {
            assert!(!s0.contains(s));
        }
    }
}
