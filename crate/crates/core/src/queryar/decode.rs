use std::rc::Rc;

use super::model::{QueryAr, Slot};
use super::plan::{plan_parallel_groups, sample_permutation};
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::flowhead::{flow_sample_from, standard_normal, FlowHead, TimestepSchedule};
use crate::numerics::{Graph, Mask, ParamStore, Tensor};
use crate::rng::{mix_seed, stream};
use crate::vgtae::LatentGrid;

const ORDER_SALT: u64 = 0x6f72_6465_72;

/// Images decoded together in lockstep; one backbone pass per group per chunk.
pub const DECODE_CHUNK: usize = 64;

/// Partial sample: conditioning class plus the latents committed so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeState {
    pub cond: usize,
    pub committed: Vec<(usize, Vec<f32>)>,
}

impl DecodeState {
    pub fn new(cond: ClassId) -> Self {
        Self { cond: cond.0, committed: Vec::new() }
    }
}

/// Inference mask over `[cond, (Q, z) × k, Q × m]`: the committed prefix is
/// causal, each group query sees the prefix and itself only.
pub fn decode_mask(committed: usize, group: usize) -> Mask {
    let prefix = 1 + 2 * committed;
    Mask::from_fn(prefix + group, |i, j| j <= i && (i < prefix || j < prefix || i == j))
}

#[derive(Clone, Copy, Debug)]
pub struct SampleSpec {
    pub group_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub schedule: TimestepSchedule,
    /// Identity generation order instead of a random permutation per image.
    pub raster: bool,
}

impl SampleSpec {
    pub fn order(&self, image: usize, n: usize) -> Result<Vec<usize>> {
        if self.raster {
            return Ok((0..n).collect());
        }
        sample_permutation(n, &mut stream(&[mix_seed(self.seed, ORDER_SALT), image as u64]))
    }

    /// Initial noise for one token; keyed by image and spatial index only.
    pub fn token_noise(&self, image: usize, index: usize, dim: usize) -> Tensor {
        standard_normal(&[1, dim], &mut stream(&[self.seed, image as u64, index as u64]))
    }
}

impl QueryAr {
    /// One backbone pass for a batch of states that share committed length
    /// and group size; returns `[B·m, d_model]` rows in group order.
    pub fn decode_step(&self, store: &ParamStore, states: &[DecodeState], groups: &[Vec<usize>]) -> Result<Tensor> {
        let (Some(first), Some(g0)) = (states.first(), groups.first()) else {
            return Err(Error::invalid("decode_step needs at least one state and group"));
        };
        if groups.len() != states.len() {
            return Err(Error::Shape(format!("{} groups for {} states", groups.len(), states.len())));
        }
        let (k, m) = (first.committed.len(), g0.len());
        if m == 0 {
            return Err(Error::invalid("empty decoding group"));
        }
        let dz = self.cfg.latent_dim;
        let mut slots = Vec::with_capacity(states.len() * (1 + 2 * k + m));
        let mut z = Vec::with_capacity(states.len() * k * dz);
        for (state, group) in states.iter().zip(groups) {
            if state.committed.len() != k || group.len() != m {
                return Err(Error::Shape("states must share committed length and group size".into()));
            }
            slots.push(Slot::Cond(state.cond));
            for (i, zi) in &state.committed {
                if zi.len() != dz {
                    return Err(Error::Shape(format!("committed latent of width {} for d_z {dz}", zi.len())));
                }
                slots.push(Slot::Query(*i));
                slots.push(Slot::Latent(*i, z.len() / dz));
                z.extend_from_slice(zi);
            }
            for (a, &q) in group.iter().enumerate() {
                if state.committed.iter().any(|(i, _)| *i == q) || group[..a].contains(&q) {
                    return Err(Error::IndexCollision(q));
                }
                slots.push(Slot::Query(q));
            }
        }
        let mut g = Graph::new();
        let latents = (k > 0).then(|| g.constant(Tensor::new(&[states.len() * k, dz], z).expect("sized")));
        let x = self.embed(&mut g, store, &slots, latents, false)?;
        let h = self.transformer(&mut g, store, x, &Rc::new(decode_mask(k, m)), states.len(), false)?;
        let len = 1 + 2 * k + m;
        let rows: Vec<usize> = (0..states.len()).flat_map(|b| b * len + 1 + 2 * k..(b + 1) * len).collect();
        let out = g.select_rows(h, &rows)?;
        Ok(g.value(out).clone())
    }

    /// Training-style causal forward over `[cond, (Q, z) for prefix, Q_next]`;
    /// returns the state at the final query.
    pub fn prefix_state(
        &self,
        store: &ParamStore,
        cond: usize,
        prefix: &[(usize, Vec<f32>)],
        next: usize,
    ) -> Result<Vec<f32>> {
        let dz = self.cfg.latent_dim;
        let mut slots = vec![Slot::Cond(cond)];
        let mut z = Vec::with_capacity(prefix.len() * dz);
        for (r, (i, zi)) in prefix.iter().enumerate() {
            slots.push(Slot::Query(*i));
            slots.push(Slot::Latent(*i, r));
            z.extend_from_slice(zi);
        }
        slots.push(Slot::Query(next));
        let mut g = Graph::new();
        let latents = if prefix.is_empty() { None } else { Some(g.constant(Tensor::new(&[prefix.len(), dz], z)?)) };
        let x = self.embed(&mut g, store, &slots, latents, false)?;
        let h = self.transformer(&mut g, store, x, &Rc::new(Mask::causal(slots.len())), 1, false)?;
        Ok(g.value(h).row(slots.len() - 1).to_vec())
    }

    /// Group-parallel generation of normalized latent grids, one per class.
    pub fn generate(
        &self,
        store: &ParamStore,
        head: &FlowHead,
        classes: &[ClassId],
        spec: &SampleSpec,
    ) -> Result<Vec<LatentGrid>> {
        let n = self.cfg.tokens;
        let dz = self.cfg.latent_dim;
        let field = head.field(store);
        let mut out = Vec::with_capacity(classes.len());
        for (c, chunk) in classes.chunks(DECODE_CHUNK).enumerate() {
            let base = c * DECODE_CHUNK;
            let plans = (0..chunk.len())
                .map(|b| plan_parallel_groups(n, spec.group_size, &spec.order(base + b, n)?))
                .collect::<Result<Vec<_>>>()?;
            let mut states: Vec<DecodeState> = chunk.iter().map(|&c| DecodeState::new(c)).collect();
            for gi in 0..plans[0].groups.len() {
                let groups: Vec<Vec<usize>> = plans.iter().map(|p| p.group(gi).to_vec()).collect();
                let h = self.decode_step(store, &states, &groups)?;
                let mut eps = Vec::with_capacity(h.rows() * dz);
                for (b, group) in groups.iter().enumerate() {
                    for &i in group {
                        eps.extend_from_slice(spec.token_noise(base + b, i, dz).data());
                    }
                }
                let eps = Tensor::new(&[h.rows(), dz], eps)?;
                let z = flow_sample_from(&field, &h, eps, spec.steps, &spec.schedule)?;
                let mut r = 0;
                for (state, group) in states.iter_mut().zip(&groups) {
                    for &i in group {
                        state.committed.push((i, z.row(r).to_vec()));
                        r += 1;
                    }
                }
            }
            for state in states {
                out.push(assemble(state, n, dz)?);
            }
        }
        Ok(out)
    }

    /// Reference decoder: one token at a time, one image at a time, each
    /// state from a fresh causal forward over the committed prefix.
    pub fn generate_sequential(
        &self,
        store: &ParamStore,
        head: &FlowHead,
        classes: &[ClassId],
        spec: &SampleSpec,
    ) -> Result<Vec<LatentGrid>> {
        let n = self.cfg.tokens;
        let dz = self.cfg.latent_dim;
        let field = head.field(store);
        let mut out = Vec::with_capacity(classes.len());
        for (b, &cls) in classes.iter().enumerate() {
            let order = spec.order(b, n)?;
            let mut state = DecodeState::new(cls);
            for &i in &order {
                let h = Tensor::new(&[1, self.cfg.d_model], self.prefix_state(store, state.cond, &state.committed, i)?)?;
                let z = flow_sample_from(&field, &h, spec.token_noise(b, i, dz), spec.steps, &spec.schedule)?;
                state.committed.push((i, z.into_data()));
            }
            out.push(assemble(state, n, dz)?);
        }
        Ok(out)
    }
}

fn assemble(state: DecodeState, n: usize, dz: usize) -> Result<LatentGrid> {
    let mut data = vec![0.0f32; n * dz];
    for (i, z) in state.committed {
        data[i * dz..(i + 1) * dz].copy_from_slice(&z);
    }
    LatentGrid::new(Tensor::new(&[n, dz], data)?)
}
