use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::plan::check_permutation;
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::nn::{self, BlockShape};
use crate::numerics::{Float, Graph, Mask, ParamStore, Tensor, Var};
use crate::vgtae::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub tokens: usize,
    pub latent_dim: usize,
    pub classes: usize,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            tokens: 64,
            latent_dim: 8,
            classes: crate::data::NUM_CLASSES,
        }
    }
}

impl ArConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.layers == 0 || self.tokens == 0 || self.latent_dim == 0 || self.classes == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("AR dimensions must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Training sequence length `1 + 2N`.
    pub fn seq_len(&self) -> usize {
        1 + 2 * self.tokens
    }
}

/// Layout of a batch of interleaved training sequences
/// `[cond, Q_π(1), z_π(1), Q_π(2), z_π(2), …]` under a causal mask.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub batch: usize,
    pub len: usize,
    pub mask: Rc<Mask>,
    pub classes: Vec<usize>,
    pub orders: Vec<Vec<usize>>,
    /// Latents in generation order, `[B·N, d_z]`; row `b·N + t` is `z_π(t)` of image `b`.
    pub latents: Tensor,
}

impl SequenceBatch {
    /// Row of `Q_π(t)` inside the flattened `[B·T, d]` sequence.
    pub fn query_slot(&self, b: usize, t: usize) -> usize {
        b * self.len + 1 + 2 * t
    }

    pub fn latent_slot(&self, b: usize, t: usize) -> usize {
        b * self.len + 2 + 2 * t
    }

    /// All query rows, image-major, in generation order.
    pub fn query_slots(&self) -> Vec<usize> {
        let n = self.orders.first().map_or(0, Vec::len);
        (0..self.batch).flat_map(|b| (0..n).map(move |t| self.query_slot(b, t))).collect()
    }
}

pub fn build_training_sequence(
    latents: &[LatentGrid],
    orders: &[Vec<usize>],
    classes: &[ClassId],
) -> Result<SequenceBatch> {
    let batch = latents.len();
    if batch == 0 || orders.len() != batch || classes.len() != batch {
        return Err(Error::Shape(format!(
            "{batch} latent grids, {} orders, {} classes",
            orders.len(),
            classes.len()
        )));
    }
    let n = latents[0].len();
    let d = latents[0].dim();
    let mut data = Vec::with_capacity(batch * n * d);
    for (z, order) in latents.iter().zip(orders) {
        if z.len() != n || z.dim() != d {
            return Err(Error::Shape("latent grids differ in shape".into()));
        }
        check_permutation(order, n)?;
        for &i in order {
            data.extend_from_slice(z.token(i));
        }
    }
    let len = 1 + 2 * n;
    Ok(SequenceBatch {
        batch,
        len,
        mask: Rc::new(Mask::causal(len)),
        classes: classes.iter().map(|c| c.0).collect(),
        orders: orders.to_vec(),
        latents: Tensor::new(&[batch * n, d], data)?,
    })
}

/// Causal transformer over interleaved position queries and latents.
///
/// Parameters under `ar.`: class table `cls`, position-query table `query`
/// (one row per spatial index), latent input projection `in_z` plus a
/// separate latent position table `zpos`, blocks and a final norm.
#[derive(Debug)]
pub struct QueryAr {
    pub cfg: ArConfig,
    pub prefix: String,
    passes: AtomicUsize,
}

impl Clone for QueryAr {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg, prefix: self.prefix.clone(), passes: AtomicUsize::new(0) }
    }
}

/// One sequence element before embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Slot {
    Cond(usize),
    Query(usize),
    /// Spatial index and row of the latent source tensor.
    Latent(usize, usize),
}

impl QueryAr {
    pub fn new(cfg: ArConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, prefix: "ar".into(), passes: AtomicUsize::new(0) })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let c = &self.cfg;
        let d = c.d_model;
        store.insert(self.name("cls"), Tensor::randn(&[c.classes, d], 0.02, rng));
        store.insert(self.name("query"), Tensor::randn(&[c.tokens, d], 0.02, rng));
        store.insert(self.name("zpos"), Tensor::randn(&[c.tokens, d], 0.02, rng));
        nn::init_linear(store, &self.name("in_z"), c.latent_dim, d, rng);
        let shape = BlockShape { dim: d, heads: c.heads, mlp_hidden: d * c.mlp_ratio };
        for l in 0..c.layers {
            nn::init_block(store, &self.name(&format!("blk{l}")), shape, c.layers, rng);
        }
        nn::init_layer_norm(store, &self.name("ln_f"), d);
    }

    /// Backbone passes since construction or the last reset.
    pub fn forward_passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    /// Embeds `batch` equally long slot lists; `latents` holds the rows that
    /// `Slot::Latent` refers to.
    pub(crate) fn embed<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        slots: &[Slot],
        latents: Option<Var>,
        trainable: bool,
    ) -> Result<Var> {
        let d = self.cfg.d_model;
        let cls = g.param(store, &self.name("cls"), trainable)?;
        let query = g.param(store, &self.name("query"), trainable)?;
        let zpos = g.param(store, &self.name("zpos"), trainable)?;
        let (n_cls, n_tok) = (self.cfg.classes, self.cfg.tokens);
        let mut parts = vec![cls, query];
        let mut z_rows = 0;
        if let Some(z) = latents {
            z_rows = g.shape(z)[0];
            let zin = nn::linear(g, store, &self.name("in_z"), z, trainable)?;
            parts.push(zin);
            parts.push(zpos);
        }
        let table = g.concat_rows(&parts)?;
        let zin_off = n_cls + n_tok;
        let zpos_off = zin_off + z_rows;
        let mut idx = Vec::with_capacity(slots.len() * d);
        let row = |r: usize, idx: &mut Vec<u32>| idx.extend((r * d..(r + 1) * d).map(|i| i as u32));
        let mut pairs = Vec::new();
        for (pos, s) in slots.iter().enumerate() {
            match *s {
                Slot::Cond(c) if c < n_cls => row(c, &mut idx),
                Slot::Query(i) if i < n_tok => row(n_cls + i, &mut idx),
                Slot::Latent(i, r) if i < n_tok && r < z_rows => {
                    row(zin_off + r, &mut idx);
                    pairs.push((pos, i));
                }
                other => return Err(Error::invalid(format!("sequence slot {other:?} out of range"))),
            }
        }
        let x = g.gather(table, Rc::new(idx), &[slots.len(), d])?;
        if pairs.is_empty() {
            return Ok(x);
        }
        // latent slots additionally receive their spatial position embedding
        let mut pos_idx = vec![crate::numerics::GATHER_ZERO; slots.len() * d];
        for (pos, i) in pairs {
            for j in 0..d {
                pos_idx[pos * d + j] = ((zpos_off + i) * d + j) as u32;
            }
        }
        let p = g.gather(table, Rc::new(pos_idx), &[slots.len(), d])?;
        g.add(x, p)
    }

    /// Transformer stack over `[batch·T, d]` embeddings; counts one pass.
    pub(crate) fn transformer<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &Rc<Mask>,
        batch: usize,
        trainable: bool,
    ) -> Result<Var> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut x = x;
        for l in 0..self.cfg.layers {
            x = nn::block(g, store, &self.name(&format!("blk{l}")), x, mask, self.cfg.heads, batch, trainable)?;
        }
        nn::layer_norm(g, store, &self.name("ln_f"), x, trainable)
    }

    pub(crate) fn training_slots(seq: &SequenceBatch) -> Vec<Slot> {
        let n = seq.orders[0].len();
        let mut slots = Vec::with_capacity(seq.batch * seq.len);
        for (b, order) in seq.orders.iter().enumerate() {
            slots.push(Slot::Cond(seq.classes[b]));
            for (t, &i) in order.iter().enumerate() {
                slots.push(Slot::Query(i));
                slots.push(Slot::Latent(i, b * n + t));
            }
        }
        slots
    }

    /// `H = f_θ(sequence)`, `[B·T, d_model]`, with the latents supplied as a
    /// graph variable (rows in generation order, as in `seq.latents`).
    pub fn ar_forward_with<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &SequenceBatch,
        latents: Var,
        trainable: bool,
    ) -> Result<Var> {
        let x = self.embed(g, store, &Self::training_slots(seq), Some(latents), trainable)?;
        self.transformer(g, store, x, &seq.mask, seq.batch, trainable)
    }

    pub fn ar_forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &SequenceBatch,
        trainable: bool,
    ) -> Result<Var> {
        let z = g.constant(seq.latents.cast());
        self.ar_forward_with(g, store, seq, z, trainable)
    }

    /// Conditioning states at every query slot, `[B·N, d_model]`.
    pub fn query_states<T: Float>(&self, g: &mut Graph<T>, h: Var, seq: &SequenceBatch) -> Result<Var> {
        g.select_rows(h, &seq.query_slots())
    }
}
