//! Synthetic labeled shapes, image I/O and pixel-space metrics.

mod image;
mod manifest;
mod metrics;
mod ppm;
mod shapes;

pub use image::Image;
pub use manifest::{read_manifest, write_dataset, write_manifest, ManifestRow};
pub use metrics::{psnr, ssim, PSNR_CAP};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use shapes::{
    gen_shapes, render, ClassId, ColorClass, Dataset, PositionBin, ShapeClass, ShapeSample, Split, CHANNELS,
    IMAGE_SIZE, NUM_CLASSES, NUM_COLORS, NUM_POSITIONS, NUM_SHAPES,
};
