use rand::Rng;

use crate::error::Result;
use crate::nn;
use crate::numerics::{Float, Graph, ParamStore, Var};

/// Residual projection `z = down(f) + skip(pool(f))`, with the pooled skip
/// broadcast back to every token.
#[derive(Clone, Debug)]
pub struct Projection {
    pub dim: usize,
    pub latent_dim: usize,
    pub tokens: usize,
    pub prefix: String,
}

impl Projection {
    pub fn new(dim: usize, latent_dim: usize, tokens: usize, prefix: impl Into<String>) -> Self {
        Self { dim, latent_dim, tokens, prefix: prefix.into() }
    }

    pub fn down_name(&self) -> String {
        format!("{}.down", self.prefix)
    }

    pub fn skip_name(&self) -> String {
        format!("{}.skip", self.prefix)
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        nn::init_linear(store, &self.down_name(), self.dim, self.latent_dim, rng);
        nn::init_linear_scaled(store, &self.skip_name(), self.dim, self.latent_dim, 0.5, rng);
    }

    /// `f: [B·N, d]` → `z: [B·N, d_z]`.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
        batch: usize,
        trainable: bool,
    ) -> Result<Var> {
        let down = nn::linear(g, store, &self.down_name(), f, trainable)?;
        let pooled = g.group_mean(f, self.tokens)?;
        let skip = nn::linear(g, store, &self.skip_name(), pooled, trainable)?;
        let skip = g.gather(
            skip,
            nn::repeat_rows_index(batch, self.latent_dim, self.tokens),
            &[batch * self.tokens, self.latent_dim],
        )?;
        g.add(down, skip)
    }
}
