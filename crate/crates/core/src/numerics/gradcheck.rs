use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Which parameter coordinates a gradient check perturbs.
#[derive(Clone, Copy, Debug)]
pub enum CoordSelection {
    All,
    /// At most `per_tensor` coordinates per tensor, drawn with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the loss and its analytic gradients for the given parameters.
/// Only parameters present in the returned gradient map are perturbed. The
/// error for one coordinate is `|a − n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(params: &ParamStore<f64>, h: f64, coords: CoordSelection, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, BTreeMap<String, Tensor<f64>>)>,
{
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective".into() });
    }
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };
    let mut work = params.clone();
    for (name, grad) in &analytic {
        let n = grad.len();
        let picked: Vec<usize> = match coords {
            CoordSelection::All => (0..n).collect(),
            CoordSelection::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(name));
                let mut idx = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for i in picked {
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let plus = f(&work)?.0;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let minus = f(&work)?.0;
            work.get_mut(name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: format!("grad_check perturbation of {name}") });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}
