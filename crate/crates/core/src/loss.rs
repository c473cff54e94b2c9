//! Cycle-consistency training objective.
//!
//! A patch sampled from the anchor (last) frame at pose theta* is tracked
//! through history frames and back; whatever pose the tracker returns on
//! re-reaching the anchor is compared to theta* through the mean squared
//! distance of the posed sampling grids. For every horizon i in 1..=k:
//!
//! - long cycle: step backward through each of the i preceding frames in
//!   order, then forward again frame by frame to the anchor (2i steps);
//! - skip cycle: jump straight to frame t-i and straight back (2 steps);
//! - similarity: negative inner product between the original patch features
//!   and the features found at frame t-i by the skip jump.
//!
//! Total: sum over i of sim_i + lambda * (skip_i + long_i). Chains share
//! tracking steps where the sequences coincide: the backward walk is one
//! shared prefix, the skip jump at i = 1 is the first backward step, and
//! skip and long cycles at i = 1 are the same two-step chain (one node in
//! the graph, so their losses are equal by construction).

use alloc::format;
use alloc::vec::Vec;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use crate::tensor::{Graph, Var};
use crate::tracker::TrackOut;

/// Loss nodes of one clip. Component sums are unweighted; `total` applies
/// lambda to the cycle terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub sim: Var,
    pub skip: Var,
    pub long: Var,
}

/// Mean squared distance between corresponding grid points, [n, 2] each.
pub fn alignment_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, target: Var) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::shape(
            "alignment_loss",
            format!("grids must be [n, 2], got {shape:?}"),
        ));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let total = g.sum(sq)?;
    g.scale(total, s(1.0 / shape[0] as f64))
}

/// Build every cycle loss for one clip.
///
/// `history[j]` holds the feature plane of frame t-(j+1) and `anchor` the
/// plane of frame t that `patch` was cut from at pose `theta_star`. The
/// tracker is a closure so tests can substitute known dynamics.
pub fn cycle_loss<S: Scalar, F>(
    g: &mut Graph<S>,
    cfg: &Config,
    patch: Var,
    history: &[Var],
    anchor: Var,
    theta_star: Var,
    mut track: F,
) -> Result<LossVars>
where
    F: FnMut(&mut Graph<S>, Var, Var) -> Result<TrackOut>,
{
    if history.len() != cfg.k {
        return Err(Error::invalid(
            "cycle_loss",
            format!("need k = {} history frames, got {}", cfg.k, history.len()),
        ));
    }
    let hp = cfg.feature_side(cfg.patch_side);
    let target = g.make_grid(theta_star, hp, hp, s(cfg.patch_scale()))?;

    // Shared backward walk: back[j] tracked onto frame t-(j+1).
    let back_len = if cfg.enable_long {
        cfg.k
    } else if cfg.enable_sim || cfg.enable_skip {
        1
    } else {
        0
    };
    let mut back: Vec<TrackOut> = Vec::with_capacity(back_len);
    let mut cur = patch;
    for frame in &history[..back_len] {
        let out = track(g, cur, *frame)?;
        cur = out.feats;
        back.push(out);
    }

    let mut sim_sum: Option<Var> = None;
    let mut skip_sum: Option<Var> = None;
    let mut long_sum: Option<Var> = None;
    let mut total: Option<Var> = None;
    let add_to = |g: &mut Graph<S>, slot: &mut Option<Var>, v: Var| -> Result<()> {
        *slot = Some(match *slot {
            Some(acc) => g.add(acc, v)?,
            None => v,
        });
        Ok(())
    };

    for i in 1..=cfg.k {
        // First hop of the skip chain; at i = 1 it is the first backward step.
        let first = if !(cfg.enable_sim || cfg.enable_skip || (cfg.enable_long && i == 1)) {
            None
        } else if i == 1 {
            Some(back[0])
        } else {
            Some(track(g, patch, history[i - 1])?)
        };

        if cfg.enable_sim {
            let aligned = g.dot(patch, first.unwrap().feats)?;
            let sim_i = g.scale(aligned, s(-1.0))?;
            add_to(g, &mut sim_sum, sim_i)?;
            add_to(g, &mut total, sim_i)?;
        }

        // Second hop back to the anchor closes the skip cycle; at i = 1 the
        // long cycle is this same chain.
        let skip_i = if cfg.enable_skip || (cfg.enable_long && i == 1) {
            let closed = track(g, first.unwrap().feats, anchor)?;
            Some(alignment_loss(g, closed.grid, target)?)
        } else {
            None
        };
        if cfg.enable_skip {
            add_to(g, &mut skip_sum, skip_i.unwrap())?;
        }

        let long_i = if cfg.enable_long {
            if i == 1 {
                skip_i
            } else {
                let mut cur = back[i - 1].feats;
                for j in (1..i).rev() {
                    cur = track(g, cur, history[j - 1])?.feats;
                }
                let closed = track(g, cur, anchor)?;
                Some(alignment_loss(g, closed.grid, target)?)
            }
        } else {
            None
        };
        if let Some(l) = long_i {
            add_to(g, &mut long_sum, l)?;
        }

        let mut cycle: Option<Var> = None;
        if let Some(v) = skip_i.filter(|_| cfg.enable_skip) {
            cycle = Some(v);
        }
        let count_long = cfg.enable_long && !(cfg.dedup_unit_cycle && i == 1);
        if let Some(v) = long_i.filter(|_| count_long) {
            cycle = Some(match cycle {
                Some(acc) => g.add(acc, v)?,
                None => v,
            });
        }
        if let Some(c) = cycle {
            let weighted = g.scale(c, s(cfg.lambda))?;
            add_to(g, &mut total, weighted)?;
        }
    }

    let zero = |g: &mut Graph<S>| g.scalar(S::zero());
    Ok(LossVars {
        total: total.unwrap_or_else(|| zero(g)),
        sim: sim_sum.unwrap_or_else(|| zero(g)),
        skip: skip_sum.unwrap_or_else(|| zero(g)),
        long: long_sum.unwrap_or_else(|| zero(g)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Model;
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use crate::tracker::track_step;
    use alloc::vec;

    fn loss_cfg(k: usize) -> Config {
        Config {
            image_side: 24,
            patch_side: 8,
            channels: vec![8, 8],
            feature_dim: 8,
            localizer_channels: 4,
            k,
            ..Config::default()
        }
    }

    fn rand_feats(rng: &mut Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[c, h, w]);
        for v in t.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        t
    }

    /// Stub tracker: always reports `theta`, echoes the query features.
    fn stub_track(
        theta: [f64; 3],
        hp: usize,
        scale: f64,
    ) -> impl FnMut(&mut Graph<f64>, Var, Var) -> Result<TrackOut> {
        move |g, q, _f| {
            let th = g.constant(Tensor::from_vec(&[3], theta.to_vec()).unwrap());
            let grid = g.make_grid(th, hp, hp, scale)?;
            Ok(TrackOut {
                feats: q,
                theta: th,
                grid,
            })
        }
    }

    fn id_theta(g: &mut Graph<f64>) -> Var {
        g.constant(Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap())
    }

    #[test]
    fn translation_stub_gives_quarter_loss() {
        // Every tracked pose off by (0.5, 0) in normalized units: each grid
        // point misses by 0.5, so each alignment loss is 0.25 exactly.
        let cfg = loss_cfg(2);
        let mut g = Graph::new();
        let mut rng = Rng::seed(41);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frames: Vec<Var> = (0..3)
            .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
            .collect();
        let th = id_theta(&mut g);
        let hp = 2;
        let lv = cycle_loss(
            &mut g,
            &cfg,
            patch,
            &frames[..2],
            frames[2],
            th,
            stub_track([0.5, 0.0, 0.0], hp, cfg.patch_scale()),
        )
        .unwrap();
        // k = 2: skip and long each contribute 0.25 per horizon.
        assert!((g.item(lv.skip) - 0.5).abs() < 1e-12);
        assert!((g.item(lv.long) - 0.5).abs() < 1e-12);
        // sim echoes the patch: -sum of squares, twice.
        let p2: f64 = g.value(patch).data().iter().map(|v| v * v).sum();
        assert!((g.item(lv.sim) + 2.0 * p2).abs() < 1e-12);
        let want_total = -2.0 * p2 + cfg.lambda * (0.5 + 0.5);
        assert!((g.item(lv.total) - want_total).abs() < 1e-12);
    }

    #[test]
    fn rotation_stub_matches_brute_force() {
        let cfg = loss_cfg(1);
        let delta = 0.3f64;
        let hp = 2usize;
        let scale = cfg.patch_scale();
        // Independent oracle: rotate each lattice point by hand.
        let mut want = 0.0;
        for iy in 0..hp {
            for ix in 0..hp {
                let ux = scale * (-1.0 + (2.0 * ix as f64 + 1.0) / hp as f64);
                let uy = scale * (-1.0 + (2.0 * iy as f64 + 1.0) / hp as f64);
                let rx = ux * delta.cos() - uy * delta.sin();
                let ry = ux * delta.sin() + uy * delta.cos();
                want += (rx - ux).powi(2) + (ry - uy).powi(2);
            }
        }
        want /= (hp * hp) as f64;
        // Closed form of the same quantity.
        let mean_sq = 2.0 * (scale * 0.5f64).powi(2);
        let closed = (2.0 - 2.0 * delta.cos()) * mean_sq;
        assert!((want - closed).abs() < 1e-15);

        let mut g = Graph::new();
        let mut rng = Rng::seed(42);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frames: Vec<Var> = (0..2)
            .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
            .collect();
        let th = id_theta(&mut g);
        let lv = cycle_loss(
            &mut g,
            &cfg,
            patch,
            &frames[..1],
            frames[1],
            th,
            stub_track([0.0, 0.0, delta], hp, scale),
        )
        .unwrap();
        assert!((g.item(lv.skip) - want).abs() < 1e-12);
        assert!((g.item(lv.long) - want).abs() < 1e-12);
    }

    #[test]
    fn unit_cycle_terms_are_one_node() {
        // At i = 1 skip and long are the same chain, so with k = 1 the
        // reported values must agree bit for bit.
        let cfg = loss_cfg(1);
        let model = Model::<f64>::new(cfg.clone(), 11).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let mut rng = Rng::seed(43);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frames: Vec<Var> = (0..2)
            .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
            .collect();
        let th = id_theta(&mut g);
        let lv = cycle_loss(&mut g, &cfg, patch, &frames[..1], frames[1], th, |g, q, f| {
            track_step(g, &cfg, &bound, q, f)
        })
        .unwrap();
        assert_eq!(g.item(lv.skip).to_bits(), g.item(lv.long).to_bits());
    }

    #[test]
    fn dedup_unit_cycle_counts_the_chain_once() {
        let mut cfg = loss_cfg(1);
        cfg.enable_sim = false;
        let mut g = Graph::new();
        let mut rng = Rng::seed(44);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frames: Vec<Var> = (0..2)
            .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
            .collect();
        let run = |g: &mut Graph<f64>, cfg: &Config| {
            let th = id_theta(g);
            let lv = cycle_loss(
                g,
                cfg,
                patch,
                &frames[..1],
                frames[1],
                th,
                stub_track([0.3, -0.2, 0.1], 2, cfg.patch_scale()),
            )
            .unwrap();
            (g.item(lv.total), g.item(lv.skip))
        };
        let (total_both, skip) = run(&mut g, &cfg);
        cfg.dedup_unit_cycle = true;
        let (total_dedup, _) = run(&mut g, &cfg);
        assert!((total_both - 2.0 * cfg.lambda * skip).abs() < 1e-12);
        assert!((total_dedup - cfg.lambda * skip).abs() < 1e-12);
    }

    #[test]
    fn track_call_counts_respect_sharing() {
        for (k, sim, skip, long, want) in [
            (4usize, true, true, true, 20usize),
            (4, true, false, true, 17),
            (4, true, true, false, 8),
            (1, true, true, true, 2),
            (2, false, false, false, 0),
        ] {
            let mut cfg = loss_cfg(k);
            cfg.enable_sim = sim;
            cfg.enable_skip = skip;
            cfg.enable_long = long;
            let mut g = Graph::new();
            let mut rng = Rng::seed(45);
            let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
            let frames: Vec<Var> = (0..k + 1)
                .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
                .collect();
            let th = id_theta(&mut g);
            let mut calls = 0usize;
            let mut inner = stub_track([0.1, 0.0, 0.0], 2, cfg.patch_scale());
            cycle_loss(&mut g, &cfg, patch, &frames[..k], frames[k], th, |g, q, f| {
                calls += 1;
                inner(g, q, f)
            })
            .unwrap();
            assert_eq!(calls, want, "k={k} sim={sim} skip={skip} long={long}");
        }
    }

    #[test]
    fn lambda_scales_only_cycle_terms() {
        let mut cfg = loss_cfg(2);
        cfg.lambda = 0.0;
        let mut g = Graph::new();
        let mut rng = Rng::seed(46);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frames: Vec<Var> = (0..3)
            .map(|_| g.constant(rand_feats(&mut rng, 8, 6, 6)))
            .collect();
        let th = id_theta(&mut g);
        let lv = cycle_loss(
            &mut g,
            &cfg,
            patch,
            &frames[..2],
            frames[2],
            th,
            stub_track([0.2, 0.1, 0.05], 2, cfg.patch_scale()),
        )
        .unwrap();
        assert_eq!(g.item(lv.total).to_bits(), g.item(lv.sim).to_bits());
        assert!(g.item(lv.skip) > 0.0);
    }

    #[test]
    fn static_scene_with_identity_tracker_has_zero_cycles() {
        // Zero pose head: every step predicts the identity pose, so on any
        // inputs the closing grids coincide with the target exactly.
        let cfg = loss_cfg(3);
        let model = Model::<f64>::new(cfg.clone(), 12).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let mut rng = Rng::seed(47);
        let patch = g.constant(rand_feats(&mut rng, 8, 2, 2));
        let frame = rand_feats(&mut rng, 8, 6, 6);
        let frames: Vec<Var> = (0..4).map(|_| g.constant(frame.clone())).collect();
        let th = id_theta(&mut g);
        let lv = cycle_loss(&mut g, &cfg, patch, &frames[..3], frames[3], th, |g, q, f| {
            track_step(g, &cfg, &bound, q, f)
        })
        .unwrap();
        assert_eq!(g.item(lv.skip), 0.0);
        assert_eq!(g.item(lv.long), 0.0);
    }

    #[test]
    fn alignment_loss_rejects_bad_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[4, 2]));
        let b = g.constant(Tensor::zeros(&[4, 3]));
        assert!(alignment_loss(&mut g, b, a).is_err());
    }

    #[test]
    fn cycle_loss_gradients_match_finite_differences() {
        // Through the real tracker and both cycle families, with a lightly
        // randomized pose head so the pose path carries gradient.
        let cfg = loss_cfg(2);
        let mut model = Model::<f64>::new(cfg.clone(), 13).unwrap();
        let mut rng = Rng::seed(48);
        for i in 0..model.params().len() {
            if model.params().get(i).name.starts_with("pose") {
                for v in model.params_mut().get_mut(i).value.data_mut() {
                    *v = rng.uniform(-0.05, 0.05);
                }
            }
        }
        let patch = rand_feats(&mut rng, 8, 2, 2);
        let f0 = rand_feats(&mut rng, 8, 6, 6);
        let f1 = rand_feats(&mut rng, 8, 6, 6);
        let f2 = rand_feats(&mut rng, 8, 6, 6);
        let loc: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .filter(|p| !p.name.starts_with("enc"))
            .map(|p| p.value.clone())
            .collect();
        let mut inputs = vec![patch, f0, f1, f2];
        inputs.extend(loc);
        let stages = cfg.channels.len();
        let cfg2 = cfg.clone();
        let rep = crate::tensor::grad_check(&inputs, move |g, v| {
            let mut vars = Vec::new();
            for _ in 0..2 * stages {
                vars.push(g.constant(Tensor::<f64>::zeros(&[1])));
            }
            vars.extend_from_slice(&v[4..]);
            let bound = crate::encoder::BoundModel::from_vars(vars, stages);
            let th = g.constant(Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
            let lv = cycle_loss(g, &cfg2, v[0], &[v[1], v[2]], v[3], th, |g, q, f| {
                track_step(g, &cfg2, &bound, q, f)
            })?;
            Ok(lv.total)
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-5, "{}", rep.max_rel_err);
    }
}
