use std::rc::Rc;

use rand::Rng;

use crate::data::CHANNELS;
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Float, Graph, ParamStore, Var, GATHER_ZERO};

/// Convolutional upsampler: conv3x3+SiLU at the latent grid, nearest ×2,
/// conv3x3+SiLU, conv3x3+sigmoid to RGB.
///
/// Activations are kept as `[B·H·W, C]` rows (NHWC); each 3×3 convolution is
/// an im2col gather followed by one matmul.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub latent_dim: usize,
    pub channels: usize,
    pub grid: usize,
    pub prefix: String,
}

impl Decoder {
    pub fn new(latent_dim: usize, channels: usize, grid: usize, prefix: impl Into<String>) -> Self {
        Self { latent_dim, channels, grid, prefix: prefix.into() }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn output_size(&self) -> usize {
        2 * self.grid
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let c = self.channels;
        nn::init_linear_scaled(store, &self.name("c1"), 9 * self.latent_dim, c, 1.4, rng);
        nn::init_linear_scaled(store, &self.name("c2"), 9 * c, c, 1.4, rng);
        nn::init_linear(store, &self.name("c3"), 9 * c, CHANNELS, rng);
    }

    /// Rewrites the first convolution so that feeding `(z - mean) / std`
    /// gives the pre-activation that `z` gave before. Exact away from the
    /// grid border; taps that fall into the zero padding see `-mean / std`
    /// instead of zero.
    pub fn fold_input_affine<T: Float>(&self, store: &mut ParamStore<T>, mean: &[f32], std: &[f32]) -> Result<()> {
        let (d, c) = (self.latent_dim, self.channels);
        if mean.len() != d || std.len() != d {
            return Err(Error::Shape(format!("affine fold needs {d} channels, got {} / {}", mean.len(), std.len())));
        }
        let mut shift = vec![0.0f64; c];
        let w = store.get_mut(&self.name("c1.w"))?;
        for (row, wr) in w.data_mut().chunks_exact_mut(c).enumerate() {
            let ch = row % d;
            for (o, v) in wr.iter_mut().enumerate() {
                shift[o] += v.as_f64() * mean[ch] as f64;
                *v = T::of(v.as_f64() * std[ch] as f64);
            }
        }
        let b = store.get_mut(&self.name("c1.b"))?;
        for (v, s) in b.data_mut().iter_mut().zip(&shift) {
            *v = T::of(v.as_f64() + s);
        }
        Ok(())
    }

    /// `z: [B·G·G, d_z]` → pixels `[B·2G·2G, 3]` in `[0, 1]`.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
        batch: usize,
        trainable: bool,
    ) -> Result<Var> {
        let n = self.grid;
        if g.shape(z) != [batch * n * n, self.latent_dim] {
            return Err(Error::Shape(format!(
                "decoder expects [{}, {}] latents, got {:?}",
                batch * n * n,
                self.latent_dim,
                g.shape(z)
            )));
        }
        let h = conv3x3(g, store, &self.name("c1"), z, batch, n, trainable)?;
        let h = g.silu(h)?;
        let h = g.gather(h, upsample_index(batch, n, self.channels), &[batch * 4 * n * n, self.channels])?;
        let h = conv3x3(g, store, &self.name("c2"), h, batch, 2 * n, trainable)?;
        let h = g.silu(h)?;
        let h = conv3x3(g, store, &self.name("c3"), h, batch, 2 * n, trainable)?;
        g.sigmoid(h)
    }
}

/// Same-padded 3×3 convolution of a square `[B·S·S, C]` activation.
fn conv3x3<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    batch: usize,
    size: usize,
    trainable: bool,
) -> Result<Var> {
    let cin = g.shape(x)[1];
    let cols = g.gather(x, im2col_index(batch, size, cin), &[batch * size * size, 9 * cin])?;
    nn::linear(g, store, name, cols, trainable)
}

/// Row `(b, y, x)` holds the 3×3 neighbourhood in `(ky, kx, c)` order, zeros outside.
pub(crate) fn im2col_index(batch: usize, size: usize, cin: usize) -> Rc<Vec<u32>> {
    let s = size as isize;
    let mut idx = Vec::with_capacity(batch * size * size * 9 * cin);
    for b in 0..batch {
        for y in 0..s {
            for x in 0..s {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (sy, sx) = (y + dy, x + dx);
                        if (0..s).contains(&sy) && (0..s).contains(&sx) {
                            let pixel = b * size * size + (sy * s + sx) as usize;
                            idx.extend((0..cin).map(|c| (pixel * cin + c) as u32));
                        } else {
                            idx.extend(std::iter::repeat_n(GATHER_ZERO, cin));
                        }
                    }
                }
            }
        }
    }
    Rc::new(idx)
}

/// Nearest-neighbour ×2 upsampling of a square `[B·S·S, C]` activation.
pub(crate) fn upsample_index(batch: usize, size: usize, c: usize) -> Rc<Vec<u32>> {
    let out = 2 * size;
    let mut idx = Vec::with_capacity(batch * out * out * c);
    for b in 0..batch {
        for y in 0..out {
            for x in 0..out {
                let pixel = b * size * size + (y / 2) * size + x / 2;
                idx.extend((0..c).map(|ch| (pixel * c + ch) as u32));
            }
        }
    }
    Rc::new(idx)
}
