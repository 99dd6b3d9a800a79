use std::rc::Rc;

use super::EncoderConfig;
use crate::data::{Image, CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{Float, Tensor};

/// Index mapping a `[B·H·W, 3]` pixel tensor to `[B·N, p·p·3]` patches.
///
/// Token `n = gy·G + gx`; within a patch, elements are ordered `(py, px, c)`.
pub fn patch_index(batch: usize, cfg: &EncoderConfig) -> Rc<Vec<u32>> {
    let (s, p, grid) = (cfg.image_size, cfg.patch_size, cfg.grid());
    let mut idx = Vec::with_capacity(batch * s * s * CHANNELS);
    for b in 0..batch {
        for gy in 0..grid {
            for gx in 0..grid {
                for py in 0..p {
                    for px in 0..p {
                        let pixel = b * s * s + (gy * p + py) * s + gx * p + px;
                        idx.extend((0..CHANNELS).map(|c| (pixel * CHANNELS + c) as u32));
                    }
                }
            }
        }
    }
    Rc::new(idx)
}

/// Stacks images into a `[B·H·W, 3]` tensor.
pub fn images_to_pixels<T: Float>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("no images given"))?;
    let mut data = Vec::with_capacity(images.len() * first.data().len());
    for img in images {
        if !img.same_shape(first) {
            return Err(Error::Shape(format!(
                "image {}x{} in a batch of {}x{}",
                img.height(),
                img.width(),
                first.height(),
                first.width()
            )));
        }
        data.extend(img.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(&[data.len() / CHANNELS, CHANNELS], data)
}

pub fn pixels_to_images<T: Float>(pixels: &Tensor<T>, size: usize) -> Result<Vec<Image>> {
    let per = size * size * CHANNELS;
    if !pixels.len().is_multiple_of(per) {
        return Err(Error::Shape(format!("{} pixel values for {size}x{size} images", pixels.len())));
    }
    pixels
        .data()
        .chunks_exact(per)
        .map(|c| Image::from_data(size, size, c.iter().map(|v| v.as_f64() as f32).collect()))
        .collect()
}

/// Images as encoder input, `[B·N, p·p·3]`.
pub fn patchify<T: Float>(images: &[&Image], cfg: &EncoderConfig) -> Result<Tensor<T>> {
    for img in images {
        if img.height() != cfg.image_size || img.width() != cfg.image_size {
            return Err(Error::Shape(format!(
                "expected {0}x{0} image, got {1}x{2}",
                cfg.image_size,
                img.height(),
                img.width()
            )));
        }
    }
    let pixels = images_to_pixels::<T>(images)?;
    let idx = patch_index(images.len(), cfg);
    let data = idx.iter().map(|&i| pixels.data()[i as usize]).collect();
    Tensor::new(&[images.len() * cfg.tokens(), cfg.patch_dim()], data)
}

/// Pixels and patches of one training batch.
#[derive(Clone, Debug)]
pub struct AeBatch<T: Float = f32> {
    pub batch: usize,
    pub pixels: Tensor<T>,
    pub patches: Tensor<T>,
}

impl<T: Float> AeBatch<T> {
    pub fn new(images: &[&Image], cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self { batch: images.len(), pixels: images_to_pixels(images)?, patches: patchify(images, cfg)? })
    }
}
