use super::Image;
use crate::error::{Error, Result};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB for dynamic range 1.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "psnr: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let n = x.data().len() as f64;
    let mse = x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / n;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Mean SSIM over 8×8 grayscale windows at stride 4.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::Shape("ssim: image shapes differ".into()));
    }
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim: {h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (gx, gy) = (x.grayscale(), y.grayscale());
    let mut total = 0.0;
    let mut count = 0;
    for top in (0..=h - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for left in (0..=w - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let px = window(&gx, w, top, left);
            let py = window(&gy, w, top, left);
            total += window_ssim(&px, &py);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn window(g: &[f64], width: usize, top: usize, left: usize) -> Vec<f64> {
    (top..top + SSIM_WINDOW).flat_map(|r| g[r * width + left..r * width + left + SSIM_WINDOW].iter().copied()).collect()
}

fn window_ssim(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn random_image(seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(16, 16, (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..0.9)).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_is_capped() {
        let x = random_image(1);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_offset_point_one_is_twenty_db() {
        let x = random_image(2);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_unit_error_is_zero_db() {
        let x = Image::zeros(4, 4);
        let y = Image::filled(4, 4, 1.0);
        assert_eq!(psnr(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn psnr_shape_mismatch() {
        assert!(psnr(&Image::zeros(4, 4), &Image::zeros(4, 5)).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = random_image(3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &inv).unwrap() < 1.0);
    }

    #[test]
    fn ssim_equal_constants_is_one() {
        let x = Image::filled(16, 16, 0.3);
        assert!((ssim(&x, &x.clone()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        assert!(ssim(&Image::zeros(7, 16), &Image::zeros(7, 16)).is_err());
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_decreasing(seed in any::<u64>(), a in 0.01f32..0.2, b in 0.01f32..0.2) {
            let x = random_image(seed);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-3);
            let y1 = x.map(|v| v + lo);
            let y2 = x.map(|v| v + hi);
            prop_assert_eq!(psnr(&x, &y1).unwrap(), psnr(&y1, &x).unwrap());
            prop_assert!(psnr(&x, &y1).unwrap() > psnr(&x, &y2).unwrap());
        }

        #[test]
        fn ssim_self_is_one(seed in any::<u64>()) {
            let x = random_image(seed);
            prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
