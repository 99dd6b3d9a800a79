//! Evaluation: feature Fréchet distance, linear probing, cluster purity,
//! reconstruction metrics and grading of class-conditional samples.

mod frechet;
mod probe;
mod purity;

pub use frechet::{frechet_distance, sqrt_psd, FeatureStats, NEG_TOL};
pub use probe::{linear_probe, ProbeConfig};
pub use purity::{cluster_purity, kmeans, KMeans, KMEANS_RESTARTS};

use std::fmt::Write as _;

use crate::data::{psnr, ssim, ClassId, Image};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::vgtae::Teacher;

/// Per-attribute and joint agreement between conditioning ids and the
/// teacher's predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradeReport {
    pub shape: f64,
    pub color: f64,
    pub position: f64,
    pub overall: f64,
    pub count: usize,
}

pub fn grade_conditional_samples(
    teacher: &Teacher,
    store: &ParamStore,
    samples: &[(ClassId, Image)],
) -> Result<GradeReport> {
    let images: Vec<&Image> = samples.iter().map(|(_, x)| x).collect();
    let pred = teacher.classify(store, &images)?;
    let mut hits = [0usize; 4];
    for ((cond, _), p) in samples.iter().zip(&pred) {
        let (a, b) = (cond.parts()?, p.parts()?);
        hits[0] += (a.0 == b.0) as usize;
        hits[1] += (a.1 == b.1) as usize;
        hits[2] += (a.2 == b.2) as usize;
        hits[3] += (cond == p) as usize;
    }
    let n = samples.len() as f64;
    Ok(GradeReport {
        shape: hits[0] as f64 / n,
        color: hits[1] as f64 / n,
        position: hits[2] as f64 / n,
        overall: hits[3] as f64 / n,
        count: samples.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Fréchet distance between teacher features of originals and reconstructions.
    pub frechet: f64,
}

/// Mean PSNR and SSIM over pairs plus the feature Fréchet distance.
pub fn reconstruction_report(
    originals: &[&Image],
    recons: &[&Image],
    teacher: &Teacher,
    store: &ParamStore,
) -> Result<ReconReport> {
    if originals.len() != recons.len() || originals.is_empty() {
        return Err(Error::Shape(format!("{} originals, {} reconstructions", originals.len(), recons.len())));
    }
    let n = originals.len() as f64;
    let mut p = 0.0;
    let mut s = 0.0;
    for (x, y) in originals.iter().zip(recons) {
        p += psnr(x, y)?;
        s += ssim(x, y)?;
    }
    let frechet = feature_distance(originals, recons, teacher, store)?;
    Ok(ReconReport { psnr: p / n, ssim: s / n, frechet })
}

/// Fréchet distance between pooled teacher features of two image sets.
pub fn feature_distance(a: &[&Image], b: &[&Image], teacher: &Teacher, store: &ParamStore) -> Result<f64> {
    let fa = FeatureStats::from_rows(&teacher.pooled_features(store, a)?)?;
    let fb = FeatureStats::from_rows(&teacher.pooled_features(store, b)?)?;
    frechet_distance(&fa, &fb)
}

/// Pixel-wise mean of a set of images.
pub fn mean_image(images: &[&Image]) -> Result<Image> {
    let first = images.first().ok_or_else(|| Error::invalid("no images given"))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for x in images {
        if !x.same_shape(first) {
            return Err(Error::Shape("images differ in size".into()));
        }
        acc.iter_mut().zip(x.data()).for_each(|(a, &v)| *a += v as f64);
    }
    let n = images.len() as f64;
    Image::from_data(first.height(), first.width(), acc.iter().map(|a| (a / n) as f32).collect())
}

/// Flattened pixels, one row per image.
pub fn pixel_features(images: &[&Image]) -> Result<Tensor> {
    let d = images.first().map_or(0, |x| x.data().len());
    let mut data = Vec::with_capacity(images.len() * d);
    for x in images {
        data.extend_from_slice(x.data());
    }
    Tensor::new(&[images.len(), d], data)
}

/// Named scalar metrics, rendered as text or a two-column CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let w = self.entries.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (n, v) in &self.entries {
            writeln!(s, "{n:<w$}  {v:.6}").unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in &self.entries {
            writeln!(s, "{n},{v:.6e}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests;
