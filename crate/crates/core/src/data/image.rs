use crate::error::{Error, Result};

/// RGB image, row-major `H×W×3`, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width * Self::CHANNELS] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * Self::CHANNELS + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * Self::CHANNELS + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Per-pixel channel mean.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data.chunks_exact(Self::CHANNELS).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / 3.0).collect()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}
