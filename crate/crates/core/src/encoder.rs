//! The spatial feature encoder and the model's full parameter set.
//!
//! The encoder is a stack of stride-2 3x3 convolutions with relu, one per
//! entry of `config.channels`, followed by per-position l2 normalization, so
//! every output location carries a unit-norm (or zero) feature vector and
//! inner products are cosine similarities. The model also owns the tracker's
//! localizer parameters (two 3x3 convs and a pose head); the pose head is
//! zero-initialized so an untrained tracker predicts the identity pose
//! instead of a random one.

use alloc::format;
use alloc::vec::Vec;

// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{s, Scalar};
use crate::tensor::{Graph, ParamSet, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Model<S> {
    cfg: Config,
    params: ParamSet<S>,
}

/// He-initialized conv weight [c_out, c_in, k, k] with zero bias.
fn conv_init<S: Scalar>(rng: &mut Rng, c_out: usize, c_in: usize, k: usize) -> (Tensor<S>, Tensor<S>) {
    let fan_in = (c_in * k * k) as f64;
    let std = (2.0 / fan_in).sqrt();
    let mut w = Tensor::zeros(&[c_out, c_in, k, k]);
    for v in w.data_mut() {
        *v = rng.normal(0.0, std);
    }
    (w, Tensor::zeros(&[c_out]))
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: Config, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed(seed);
        let mut params = ParamSet::new();
        let mut c_in = cfg.in_channels;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let (w, b) = conv_init(&mut rng, c_out, c_in, 3);
            params.push(format!("enc{i}.w"), w);
            params.push(format!("enc{i}.b"), b);
            c_in = c_out;
        }
        // The localizer consumes the affinity volume: one input channel per
        // image feature position, spatial extent of the patch feature grid.
        let aff_channels = cfg.feature_side(cfg.image_side).pow(2);
        let lc = cfg.localizer_channels;
        let (w, b) = conv_init(&mut rng, lc, aff_channels, 3);
        params.push("loc0.w", w);
        params.push("loc0.b", b);
        let (w, b) = conv_init(&mut rng, lc, lc, 3);
        params.push("loc1.w", w);
        params.push("loc1.b", b);
        let pose_in = lc * cfg.feature_side(cfg.patch_side).pow(2);
        params.push("pose.w", Tensor::zeros(&[3, pose_in]));
        params.push("pose.b", Tensor::zeros(&[3]));
        Ok(Model { cfg, params })
    }

    pub fn cfg(&self) -> &Config {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }

    /// Insert every parameter into `g` as a leaf, in parameter-set order.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect();
        BoundModel {
            vars,
            stages: self.cfg.channels.len(),
        }
    }

    /// Encode an input [in_channels, side, side] to unit-norm features
    /// [feature_dim, side/2^stages, side/2^stages]. Any side divisible by
    /// 2^stages is accepted; training uses the configured image and patch
    /// sides, label propagation may feed other sizes.
    pub fn encode(&self, g: &mut Graph<S>, bound: &BoundModel, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let stages = self.cfg.channels.len();
        let ok = shape.len() == 3
            && shape[0] == self.cfg.in_channels
            && shape[1] == shape[2]
            && shape[1] % (1 << stages) == 0
            && shape[1] >= (1 << stages);
        if !ok {
            return Err(Error::shape(
                "encode",
                format!(
                    "want [{}, s, s] with s a multiple of {}, got {shape:?}",
                    self.cfg.in_channels,
                    1 << stages
                ),
            ));
        }
        encode_stages(g, &bound.enc_stages(), s(self.cfg.eps_norm), x)
    }
}

/// Conv/relu stages then l2 normalization, over explicit weight vars. Kept
/// free-standing so gradient checks can wire arbitrary leaves as weights.
pub fn encode_stages<S: Scalar>(
    g: &mut Graph<S>,
    stages: &[(Var, Var)],
    eps: S,
    x: Var,
) -> Result<Var> {
    let mut cur = x;
    for &(w, b) in stages {
        let conv = g.conv2d(cur, w, b, 2, 1)?;
        cur = g.relu(conv)?;
    }
    g.l2_normalize_channels(cur, eps)
}

/// Graph handles of one bound model, in parameter-set order: encoder stage
/// pairs, then loc0, loc1, pose (w before b throughout).
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
    stages: usize,
}

impl BoundModel {
    /// Assemble from explicit vars in parameter-set order, `2 * stages`
    /// encoder vars followed by the six localizer vars. Gradient checks use
    /// this to wire their own leaves as parameters.
    pub fn from_vars(vars: Vec<Var>, stages: usize) -> Self {
        assert_eq!(vars.len(), 2 * stages + 6);
        BoundModel { vars, stages }
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    pub fn enc_stages(&self) -> Vec<(Var, Var)> {
        (0..self.stages)
            .map(|i| (self.vars[2 * i], self.vars[2 * i + 1]))
            .collect()
    }

    pub fn loc0(&self) -> (Var, Var) {
        (self.vars[2 * self.stages], self.vars[2 * self.stages + 1])
    }

    pub fn loc1(&self) -> (Var, Var) {
        (self.vars[2 * self.stages + 2], self.vars[2 * self.stages + 3])
    }

    pub fn pose(&self) -> (Var, Var) {
        (self.vars[2 * self.stages + 4], self.vars[2 * self.stages + 5])
    }

    /// Gradients of all parameters after a backward pass, in order.
    pub fn grads<S: Scalar>(&self, g: &Graph<S>) -> Vec<Tensor<S>> {
        self.vars.iter().map(|&v| g.grad(v)).collect()
    }
}
