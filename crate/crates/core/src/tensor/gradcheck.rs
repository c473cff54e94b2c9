use alloc::format;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Step size for central differences.
const H: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// (input index, coordinate, analytic, numeric) behind `max_rel_err`.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compare analytic gradients of a scalar-valued graph function against
/// central finite differences over every input coordinate.
///
/// Relative error per coordinate is |a - n| / max(1e-3, |a| + |n|). The floor
/// absorbs central-difference cancellation noise (about machine epsilon times
/// |f| / H, so up to ~1e-9 for loss values near 100) on coordinates whose
/// true gradient is at or near zero; above the floor the measure is an
/// ordinary relative error. The closure must be deterministic: it is
/// re-evaluated many times with perturbed inputs. Gradient checking is
/// defined for `f64`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_sampled(inputs, None, 0, f)
}

/// [`grad_check`] with at most `cap` coordinates per input, chosen by a seeded
/// shuffle. Full-model checks use this to stay within a time budget.
pub fn grad_check_sampled<F>(
    inputs: &[Tensor<f64>],
    cap: Option<usize>,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let y = f(&mut g, &vars)?;
        if g.value(y).numel() != 1 {
            return Err(Error::shape(
                "grad_check",
                format!("function must return a scalar, got {:?}", g.value(y).shape()),
            ));
        }
        g.backward(y)?;
        vars.iter().map(|v| g.grad(*v)).collect()
    };

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let y = f(&mut g, &vars)?;
        Ok(g.item(y))
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut rng = Rng::seed(seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut worst = None;
    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match cap {
            Some(cap) if cap < n => {
                // Partial Fisher-Yates: first `cap` entries of a shuffle.
                let mut idx: Vec<usize> = (0..n).collect();
                for j in 0..cap {
                    let k = j + rng.below(n - j);
                    idx.swap(j, k);
                }
                idx.truncate(cap);
                idx
            }
            _ => (0..n).collect(),
        };
        for &j in &coords {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + H;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - H;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / (1e-3f64).max(a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = Some((i, j, a, numeric));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        coords_checked: checked,
        worst,
    })
}
