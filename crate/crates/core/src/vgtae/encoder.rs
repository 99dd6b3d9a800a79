use std::rc::Rc;

use rand::Rng;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{self, BlockShape};
use crate::numerics::{Float, Graph, Mask, ParamStore, Tensor, Var};

/// Patch embedding + learned positions + bidirectional pre-norm transformer.
///
/// Used both for the trainable semantic encoder (`enc`) and for the frozen
/// teacher (`teacher`); the two differ only in parameter prefix.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub prefix: String,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Self {
        Self { cfg, prefix: prefix.into() }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    fn block_shape(&self) -> BlockShape {
        BlockShape { dim: self.cfg.dim, heads: self.cfg.heads, mlp_hidden: self.cfg.dim * self.cfg.mlp_ratio }
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let c = &self.cfg;
        nn::init_linear(store, &self.name("patch"), c.patch_dim(), c.dim, rng);
        store.insert(self.name("pos"), Tensor::randn(&[c.tokens(), c.dim], 0.02, rng));
        for l in 0..c.layers {
            nn::init_block(store, &self.name(&format!("blk{l}")), self.block_shape(), c.layers, rng);
        }
        nn::init_layer_norm(store, &self.name("ln_f"), c.dim);
    }

    /// `patches: [B·N, p·p·3]` → features `[B·N, d]`.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        patches: Var,
        batch: usize,
        trainable: bool,
    ) -> Result<Var> {
        let c = &self.cfg;
        let n = c.tokens();
        if g.shape(patches) != [batch * n, c.patch_dim()] {
            return Err(Error::Shape(format!(
                "encoder expects [{}, {}] patches, got {:?}",
                batch * n,
                c.patch_dim(),
                g.shape(patches)
            )));
        }
        let mut x = nn::linear(g, store, &self.name("patch"), patches, trainable)?;
        let pos = g.param(store, &self.name("pos"), trainable)?;
        let pos = g.gather(pos, nn::tile_index(n, c.dim, batch), &[batch * n, c.dim])?;
        x = g.add(x, pos)?;
        let mask = Rc::new(Mask::from_fn(n, |_, _| true));
        for l in 0..c.layers {
            x = nn::block(g, store, &self.name(&format!("blk{l}")), x, &mask, c.heads, batch, trainable)?;
        }
        nn::layer_norm(g, store, &self.name("ln_f"), x, trainable)
    }
}
