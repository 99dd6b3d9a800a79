use std::fmt::Write as _;

use crate::data::{ClassId, Dataset, Image, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{grade_conditional_samples, reconstruction_report};
use crate::numerics::Tensor;
use crate::train::{sample_spec, train_ae_stage2, train_ar, AeModel, ArModel, TeacherModel, TrainConfig};
use crate::vgtae::{LatentGrid, LatentStats};

/// Sampling seed used for every sweep point, so points differ only in the decoder.
pub const SWEEP_SAMPLE_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub sigma: f64,
    pub psnr: f64,
    pub frechet: f64,
    pub cond_accuracy: f64,
}

pub struct SweepInputs<'a> {
    pub cfg: &'a TrainConfig,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub teacher: &'a TeacherModel,
    /// Teacher token features of `train`.
    pub feats: &'a Tensor,
    pub stage1: &'a AeModel,
}

/// Conditioning ids cycling through every class.
pub fn all_classes(count: usize) -> Vec<ClassId> {
    (0..count).map(|i| ClassId(i % NUM_CLASSES)).collect()
}

fn train_generator(cfg: &TrainConfig, stage: &AeModel, train: &Dataset) -> Result<ArModel> {
    let latents = stage.normalized_latents(&train.images())?;
    Ok(train_ar(cfg, &latents, &train.class_ids())?.model)
}

fn evaluate(
    inputs: &SweepInputs<'_>,
    model: &AeModel,
    generated: &[LatentGrid],
    classes: &[ClassId],
) -> Result<(f64, f64, f64)> {
    let vi = inputs.val.images();
    let recon = model.reconstruct(&vi)?;
    let rr: Vec<&Image> = recon.iter().collect();
    let r = reconstruction_report(&vi, &rr, &inputs.teacher.teacher, &inputs.teacher.store)?;
    let images = model.decode_normalized(generated)?;
    let samples: Vec<(ClassId, Image)> = classes.iter().copied().zip(images).collect();
    let g = grade_conditional_samples(&inputs.teacher.teacher, &inputs.teacher.store, &samples)?;
    Ok((r.psnr, r.frechet, g.overall))
}

/// Stage-2 decoder training at each noise level, then reconstruction and
/// conditional-generation metrics, for every seed.
///
/// With a frozen projection the normalized latents do not depend on σ, so one
/// generator per seed is trained and its samples are decoded by every
/// σ-specific decoder. With a trainable projection each point trains its own.
pub fn sweep_noise(inputs: &SweepInputs<'_>, sigmas: &[f64], seeds: &[u64], samples: usize) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() || seeds.is_empty() || samples == 0 {
        return Err(Error::invalid("sweep needs at least one σ, one seed and one sample"));
    }
    let classes = all_classes(samples);
    let mut rows = Vec::with_capacity(sigmas.len() * seeds.len());
    for &seed in seeds {
        let mut cfg = inputs.cfg.clone();
        cfg.seed = seed;
        let shared = if cfg.stage2_train_projection {
            None
        } else {
            let latents = inputs.stage1.ae.latents(&inputs.stage1.store, &inputs.train.images())?;
            let frozen = AeModel { stats: Some(LatentStats::compute(&latents)?), ..inputs.stage1.clone() };
            let ar = train_generator(&cfg, &frozen, inputs.train)?;
            Some(ar.generate(&classes, &sample_spec(&cfg, SWEEP_SAMPLE_SEED, 1))?)
        };
        for &sigma in sigmas {
            cfg.sigma_noise = sigma;
            let stage2 = train_ae_stage2(&cfg, inputs.train, inputs.stage1, inputs.teacher, inputs.feats)?.model;
            let generated = match &shared {
                Some(z) => z.clone(),
                None => train_generator(&cfg, &stage2, inputs.train)?.generate(&classes, &sample_spec(&cfg, SWEEP_SAMPLE_SEED, 1))?,
            };
            let (psnr, frechet, cond_accuracy) = evaluate(inputs, &stage2, &generated, &classes)?;
            rows.push(SweepRow { seed, sigma, psnr, frechet, cond_accuracy });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("seed,sigma,psnr,frechet,cond_accuracy\n");
    for r in rows {
        writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.seed, r.sigma, r.psnr, r.frechet, r.cond_accuracy).unwrap();
    }
    s
}
