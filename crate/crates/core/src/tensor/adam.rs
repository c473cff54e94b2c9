use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

/// A named trainable tensor. Names give optimizer errors and checkpoints a
/// stable identity.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
}

/// Ordered collection of parameters; order is fixed at construction and
/// shared by gradients, optimizer state and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<S>) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        AdamConfig {
            lr: s(2e-4),
            beta1: s(0.5),
            beta2: s(0.999),
            eps: s(1e-8),
        }
    }
}

/// Adam with bias correction. First and second moment buffers are laid out in
/// parameter order; `step` refuses non-finite gradients, naming the parameter,
/// and leaves all state untouched in that case.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    cfg: AdamConfig<S>,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig<S>, params: &ParamSet<S>) -> Self {
        Adam {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![S::zero(); p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.value.numel()]).collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig<S> {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.m, &self.v)
    }

    /// Restore optimizer state (from a checkpoint). Buffer layout must match
    /// the parameter set this optimizer was built for.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<S>>, v: Vec<Vec<S>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::invalid(
                "adam_restore",
                format!("expected {} moment buffers, got {}/{}", self.m.len(), m.len(), v.len()),
            ));
        }
        for (i, (mm, vv)) in m.iter().zip(&v).enumerate() {
            if mm.len() != self.m[i].len() || vv.len() != self.v[i].len() {
                return Err(Error::invalid(
                    "adam_restore",
                    format!("moment buffer {i} has wrong length"),
                ));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One optimizer step: params[i] -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Tensor<S>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            let p = params.get(i);
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient {:?} vs parameter '{}' {:?}",
                        g.shape(),
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
            if !g.is_finite() {
                return Err(Error::non_finite(
                    "adam_step",
                    format!("gradient of parameter '{}' is not finite", p.name),
                ));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = S::one() - b1.powi(self.step as i32);
        let bc2 = S::one() - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(i).value.data_mut();
            for (j, gj) in g.data().iter().enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * *gj;
                v[j] = b2 * v[j] + (S::one() - b2) * *gj * *gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
