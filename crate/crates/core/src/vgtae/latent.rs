use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Float, Tensor};

/// Lower bound on the per-channel standard deviation used for normalization.
pub const STD_EPS: f64 = 1e-6;

/// One image's latent tokens, `[N, d_z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub tokens: Tensor,
}

impl LatentGrid {
    pub fn new(tokens: Tensor) -> Result<Self> {
        if tokens.shape().len() != 2 {
            return Err(Error::Shape(format!("latent grid must be 2-D, got {:?}", tokens.shape())));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        self.tokens.row(i)
    }

    /// Splits `[B·N, d_z]` rows into `B` grids of `n` tokens.
    pub fn split<T: Float>(rows: &Tensor<T>, n: usize) -> Result<Vec<LatentGrid>> {
        if n == 0 || !rows.rows().is_multiple_of(n) {
            return Err(Error::Shape(format!("{} rows do not split into grids of {n}", rows.rows())));
        }
        let d = rows.cols();
        rows.data()
            .chunks_exact(n * d)
            .map(|c| LatentGrid::new(Tensor::new(&[n, d], c.iter().map(|v| v.as_f64() as f32).collect())?))
            .collect()
    }

    /// Inverse of [`LatentGrid::split`].
    pub fn stack<T: Float>(grids: &[LatentGrid]) -> Result<Tensor<T>> {
        let first = grids.first().ok_or_else(|| Error::invalid("no latent grids given"))?;
        let mut data = Vec::with_capacity(grids.len() * first.tokens.len());
        for z in grids {
            if z.tokens.shape() != first.tokens.shape() {
                return Err(Error::Shape(format!(
                    "latent grid {:?} in a batch of {:?}",
                    z.tokens.shape(),
                    first.tokens.shape()
                )));
            }
            data.extend(z.tokens.data().iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(&[grids.len() * first.len(), first.dim()], data)
    }
}

/// Per-channel mean and (population) standard deviation of latent tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentStats {
    /// Statistics over every token of every grid; needs at least two grids.
    pub fn compute(batch: &[LatentGrid]) -> Result<Self> {
        if batch.len() < 2 {
            return Err(Error::invalid(format!(
                "fresh latent statistics need a batch of ≥ 2 grids, got {}",
                batch.len()
            )));
        }
        let rows = LatentGrid::stack::<f64>(batch)?;
        let (n, d) = (rows.rows() as f64, rows.cols());
        let mut mean = vec![0.0f64; d];
        for r in rows.data().chunks_exact(d) {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for r in rows.data().chunks_exact(d) {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&v| (v / n).sqrt() as f32).collect(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(scale, shift)` with `z_norm = z·scale + shift`.
    pub fn affine<T: Float>(&self) -> (Vec<T>, Vec<T>) {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| {
                let inv = 1.0 / (s as f64).max(STD_EPS);
                (T::of(inv), T::of(-(m as f64) * inv))
            })
            .unzip()
    }

    pub fn normalize(&self, z: &LatentGrid) -> Result<LatentGrid> {
        self.check(z)?;
        let (scale, shift) = self.affine::<f64>();
        Ok(self.map_cols(z, |j, v| v * scale[j] + shift[j]))
    }

    pub fn denormalize(&self, z: &LatentGrid) -> Result<LatentGrid> {
        self.check(z)?;
        Ok(self.map_cols(z, |j, v| v * (self.std[j] as f64).max(STD_EPS) + self.mean[j] as f64))
    }

    fn check(&self, z: &LatentGrid) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::Shape(format!("{}-channel stats for {}-channel latents", self.dim(), z.dim())));
        }
        Ok(())
    }

    fn map_cols(&self, z: &LatentGrid, f: impl Fn(usize, f64) -> f64) -> LatentGrid {
        let d = z.dim();
        let data = z.tokens.data().iter().enumerate().map(|(i, &v)| f(i % d, v as f64) as f32).collect();
        LatentGrid { tokens: Tensor::new(z.tokens.shape(), data).expect("same shape") }
    }
}

/// Standardizes a batch per channel. With `stats` given they are reused;
/// otherwise fresh statistics are computed from the batch and returned.
pub fn normalize_latents(batch: &[LatentGrid], stats: Option<&LatentStats>) -> Result<(Vec<LatentGrid>, LatentStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => LatentStats::compute(batch)?,
    };
    let out = batch.iter().map(|z| stats.normalize(z)).collect::<Result<_>>()?;
    Ok((out, stats))
}

/// `N(0, σ²)` noise with the given shape.
pub fn noise_tensor<T: Float, R: Rng + ?Sized>(shape: &[usize], sigma: f64, rng: &mut R) -> Result<Tensor<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise std must be finite and ≥ 0, got {sigma}")));
    }
    let n: usize = shape.iter().product();
    if sigma == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let dist = Normal::new(0.0, sigma).expect("valid std");
    Tensor::new(shape, (0..n).map(|_| T::of(dist.sample(rng))).collect())
}

/// `z_norm + ε`, `ε ~ N(0, σ²)` elementwise.
pub fn inject_noise<R: Rng + ?Sized>(z_norm: &LatentGrid, sigma: f64, rng: &mut R) -> Result<LatentGrid> {
    let eps = noise_tensor::<f32, _>(z_norm.tokens.shape(), sigma, rng)?;
    let data = z_norm.tokens.data().iter().zip(eps.data()).map(|(&a, &b)| a + b).collect();
    LatentGrid::new(Tensor::new(z_norm.tokens.shape(), data)?)
}
