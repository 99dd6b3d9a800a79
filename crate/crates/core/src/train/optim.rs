use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, weight_decay: 0.05, eps: 1e-8 }
    }
}

/// First and second moments per parameter, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update of every parameter that has a gradient. Parameters
/// without a gradient are left untouched, including by weight decay.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite { op: format!("gradient of {name}") });
        }
        if params.get(name)?.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient for {name} has shape {:?}", g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + hp.eps);
            let w = *pi as f64;
            *pi = (w - lr * (update + hp.weight_decay * w)) as f32;
        }
    }
    Ok(())
}

/// Linear warmup to `base_lr`, then half-cosine decay to 0 at `total`.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64, warmup: usize) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Exponential moving average of a parameter store, kept in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: BTreeMap<String, Vec<f64>>,
}

impl Ema {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        let shadow = params.iter().map(|(n, t)| (n.clone(), t.data().iter().map(|&v| v as f64).collect())).collect();
        Self { decay, shadow }
    }

    /// `e ← d·e + (1 − d)·p`.
    pub fn update(&mut self, params: &ParamStore) -> Result<()> {
        let d = self.decay;
        for (name, e) in self.shadow.iter_mut() {
            let p = params.get(name)?;
            if p.len() != e.len() {
                return Err(Error::Shape(format!("EMA shadow of {name} has {} entries", e.len())));
            }
            for (ei, &pi) in e.iter_mut().zip(p.data()) {
                *ei = d * *ei + (1.0 - d) * pi as f64;
            }
        }
        Ok(())
    }

    /// The shadow weights as a parameter store with the given shapes.
    pub fn store(&self, like: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, e) in &self.shadow {
            let shape = like.get(name)?.shape().to_vec();
            out.insert(name.clone(), Tensor::new(&shape, e.iter().map(|&v| v as f32).collect())?);
        }
        Ok(out)
    }
}
