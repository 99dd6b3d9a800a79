//! VGT-AE: semantic encoder, residual projection to a compact latent grid,
//! convolutional pixel decoder, and the two training-stage losses.

mod decoder;
mod encoder;
mod latent;
mod loss;
mod patch;
mod projection;
mod teacher;


pub use decoder::Decoder;
pub use encoder::Encoder;
pub use latent::{inject_noise, noise_tensor, normalize_latents, LatentGrid, LatentStats, STD_EPS};
pub use loss::{stage1_loss, stage2_loss, stage2_loss_from_latents, Stage1LossReport, Stage2LossReport, Trainable};
pub use patch::{images_to_pixels, patch_index, patchify, pixels_to_images, AeBatch};
pub use projection::Projection;
pub use teacher::{Teacher, TeacherLogits};

use rand::Rng;

use crate::data::{Image, CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::{Float, Graph, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { image_size: IMAGE_SIZE, patch_size: 2, dim: 64, layers: 4, heads: 4, mlp_ratio: 4 }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("encoder needs ≥ 1 layer and mlp_ratio ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AeConfig {
    pub encoder: EncoderConfig,
    pub latent_dim: usize,
    pub decoder_channels: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), latent_dim: 8, decoder_channels: 32 }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.latent_dim == 0 || self.decoder_channels == 0 {
            return Err(Error::Config("latent_dim and decoder_channels must be ≥ 1".into()));
        }
        if self.encoder.patch_size != 2 {
            return Err(Error::Config("the decoder upsamples ×2, so patch_size must be 2".into()));
        }
        Ok(())
    }
}

/// The tokenizer. Parameters live under `enc.`, `proj.` and `dec.`.
#[derive(Clone, Debug)]
pub struct VgtAe {
    pub cfg: AeConfig,
    pub encoder: Encoder,
    pub projection: Projection,
    pub decoder: Decoder,
}

/// Images per no-grad inference graph.
const INFER_CHUNK: usize = 64;

impl VgtAe {
    pub fn new(cfg: AeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            encoder: Encoder::new(cfg.encoder, "enc"),
            projection: Projection::new(cfg.encoder.dim, cfg.latent_dim, cfg.encoder.tokens(), "proj"),
            decoder: Decoder::new(cfg.latent_dim, cfg.decoder_channels, cfg.encoder.grid(), "dec"),
        })
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, rng);
        self.projection.init(&mut store, rng);
        self.decoder.init(&mut store, rng);
        store
    }

    pub fn tokens(&self) -> usize {
        self.cfg.encoder.tokens()
    }

    /// Encoder features `[B·N, d]`.
    pub fn encode(&self, store: &ParamStore, images: &[&Image]) -> Result<Tensor> {
        chunked(images, self.cfg.encoder.dim, |chunk| {
            let mut g = Graph::new();
            let p = g.constant(patchify(chunk, &self.cfg.encoder)?);
            let f = self.encoder.forward(&mut g, store, p, chunk.len(), false)?;
            Ok(g.value(f).clone())
        })
    }

    /// Un-normalized latents `z = φ(E(x))`, one grid per image.
    pub fn latents(&self, store: &ParamStore, images: &[&Image]) -> Result<Vec<LatentGrid>> {
        let z = chunked(images, self.cfg.latent_dim, |chunk| {
            let mut g = Graph::new();
            let p = g.constant(patchify(chunk, &self.cfg.encoder)?);
            let f = self.encoder.forward(&mut g, store, p, chunk.len(), false)?;
            let z = self.projection.forward(&mut g, store, f, chunk.len(), false)?;
            Ok(g.value(z).clone())
        })?;
        LatentGrid::split(&z, self.tokens())
    }

    pub fn decode(&self, store: &ParamStore, latents: &[LatentGrid]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFER_CHUNK) {
            let mut g = Graph::new();
            let z = g.constant(LatentGrid::stack(chunk)?);
            let x = self.decoder.forward(&mut g, store, z, chunk.len(), false)?;
            out.extend(pixels_to_images(g.value(x), self.cfg.encoder.image_size)?);
        }
        Ok(out)
    }

    /// `D(φ(E(x)))`, the stage-1 reconstruction path.
    pub fn reconstruct(&self, store: &ParamStore, images: &[&Image]) -> Result<Vec<Image>> {
        let z = self.latents(store, images)?;
        self.decode(store, &z)
    }
}

fn chunked(
    images: &[&Image],
    cols: usize,
    mut f: impl FnMut(&[&Image]) -> Result<Tensor>,
) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::invalid("no images given"));
    }
    let mut data = Vec::new();
    for chunk in images.chunks(INFER_CHUNK) {
        data.extend(f(chunk)?.into_data());
    }
    let rows = data.len() / cols;
    Tensor::new(&[rows, cols], data)
}
