use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_shapes, Split, NUM_CLASSES};
use crate::train::joint_accuracy;
use crate::vgtae::EncoderConfig;

fn small_teacher() -> (Teacher, ParamStore) {
    let t = Teacher::new(EncoderConfig { dim: 8, layers: 1, heads: 2, mlp_ratio: 2, ..EncoderConfig::default() }).unwrap();
    let s = t.init(&mut ChaCha8Rng::seed_from_u64(1));
    (t, s)
}

#[test]
fn grading_real_images_matches_classifier_accuracy() {
    let (t, s) = small_teacher();
    let ds = gen_shapes(128, 3, Split::Val).unwrap();
    let samples: Vec<(ClassId, Image)> = ds.samples.iter().map(|x| (x.class_id(), x.image.clone())).collect();
    let report = grade_conditional_samples(&t, &s, &samples).unwrap();
    let acc = joint_accuracy(&t.classify(&s, &ds.images()).unwrap(), &ds.class_ids());
    assert_eq!(report.overall, acc);
    assert_eq!(report.count, 128);
    assert!(report.overall <= report.shape.min(report.color).min(report.position));
}

#[test]
fn constant_images_grade_at_chance() {
    let (t, s) = small_teacher();
    let samples: Vec<(ClassId, Image)> = (0..2 * NUM_CLASSES).map(|c| (ClassId(c % NUM_CLASSES), Image::zeros(16, 16))).collect();
    let r = grade_conditional_samples(&t, &s, &samples).unwrap();
    assert!((r.overall - 1.0 / NUM_CLASSES as f64).abs() < 1e-12);
    assert!((r.shape - 0.25).abs() < 1e-12);
    assert!((r.color - 0.25).abs() < 1e-12);
    assert!((r.position - 0.25).abs() < 1e-12);
}

#[test]
fn identity_reconstruction_is_perfect() {
    let (t, s) = small_teacher();
    let ds = gen_shapes(32, 4, Split::Val).unwrap();
    let x = ds.images();
    let r = reconstruction_report(&x, &x, &t, &s).unwrap();
    assert_eq!(r.psnr, crate::data::PSNR_CAP);
    assert!((r.ssim - 1.0).abs() < 1e-9);
    assert_eq!(r.frechet, 0.0);
}

#[test]
fn mean_image_and_pixel_features() {
    let a = Image::filled(2, 2, 0.2);
    let b = Image::filled(2, 2, 0.6);
    let m = mean_image(&[&a, &b]).unwrap();
    assert!(m.data().iter().all(|&v| (v - 0.4).abs() < 1e-7));
    let f = pixel_features(&[&a, &b]).unwrap();
    assert_eq!(f.shape(), &[2, 12]);
    assert!(mean_image(&[]).is_err());
}

#[test]
fn report_rendering() {
    let mut r = MetricsReport::default();
    r.push("psnr", 31.5);
    r.push("fd", 0.25);
    assert_eq!(r.get("fd"), Some(0.25));
    assert!(r.to_csv().starts_with("metric,value\npsnr,3.150000e1\n"));
    assert!(r.to_text().contains("fd    0.250000"));
}
