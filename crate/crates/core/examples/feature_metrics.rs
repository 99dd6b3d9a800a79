//! Fréchet distance, linear probe and k-means purity on raw pixels of the
//! shapes data, with one attribute as the label.

use vgt::data::{gen_shapes, Split};
use vgt::eval::{cluster_purity, frechet_distance, linear_probe, pixel_features, FeatureStats, ProbeConfig};

fn main() -> vgt::Result<()> {
    let a = gen_shapes(400, 0, Split::Train)?;
    let b = gen_shapes(400, 0, Split::Val)?;
    let fa = pixel_features(&a.images())?;
    let fb = pixel_features(&b.images())?;

    let (sa, sb) = (FeatureStats::from_rows(&fa)?, FeatureStats::from_rows(&fb)?);
    println!("pixel Fréchet distance train vs val: {:.3}", frechet_distance(&sa, &sb)?);
    println!("pixel Fréchet distance train vs itself: {:.3}", frechet_distance(&sa, &sa)?);

    let color: Vec<usize> = a.samples.iter().map(|s| s.color.index()).collect();
    let shape: Vec<usize> = a.samples.iter().map(|s| s.shape.index()).collect();
    let cfg = ProbeConfig::default();
    println!("linear probe on pixels: color {:.3}, shape {:.3}", linear_probe(&fa, &color, &cfg)?, linear_probe(&fa, &shape, &cfg)?);
    println!("k-means purity on pixels (k = 4): color {:.3}, shape {:.3}", cluster_purity(&fa, &color, 4)?, cluster_purity(&fa, &shape, 4)?);
    Ok(())
}
