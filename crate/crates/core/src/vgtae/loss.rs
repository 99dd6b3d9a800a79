use super::{patch_index, AeBatch, LatentStats, Teacher, VgtAe};
use crate::error::{Error, Result};
use crate::numerics::{Float, Graph, ParamStore, Tensor, Var};

/// Which tokenizer parts receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub encoder: bool,
    pub projection: bool,
    pub decoder: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { encoder: true, projection: true, decoder: true };
    pub const DECODER: Trainable = Trainable { encoder: false, projection: false, decoder: true };
    pub const PROJECTION_AND_DECODER: Trainable = Trainable { encoder: false, projection: true, decoder: true };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1LossReport {
    pub total: f64,
    pub rec_mse: f64,
    pub perceptual: f64,
    pub distill: f64,
    pub lambda_distill: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2LossReport {
    pub total: f64,
    pub rec_mse: f64,
    pub perceptual: f64,
}

fn check_teacher<T: Float>(ae: &VgtAe, teacher: &Teacher, feats: &Tensor<T>, batch: usize) -> Result<()> {
    if *teacher.cfg() != ae.cfg.encoder {
        return Err(Error::Shape(format!(
            "teacher architecture {:?} differs from encoder {:?}",
            teacher.cfg(),
            ae.cfg.encoder
        )));
    }
    let want = [batch * ae.tokens(), ae.cfg.encoder.dim];
    if feats.shape() != want {
        return Err(Error::Shape(format!("teacher features {:?}, expected {want:?}", feats.shape())));
    }
    Ok(())
}

fn scalar<T: Float>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().as_f64()
}

/// Reconstruction + teacher-feature perceptual term + `λ·distill`, where
/// `teacher_feats` are the frozen teacher's token features of the batch.
#[allow(clippy::too_many_arguments)]
pub fn stage1_loss<T: Float>(
    g: &mut Graph<T>,
    ae: &VgtAe,
    store: &ParamStore<T>,
    teacher: &Teacher,
    teacher_store: &ParamStore<T>,
    batch: &AeBatch<T>,
    teacher_feats: &Tensor<T>,
    lambda_distill: f64,
) -> Result<(Var, Stage1LossReport)> {
    check_teacher(ae, teacher, teacher_feats, batch.batch)?;
    let b = batch.batch;
    let p = g.constant(batch.patches.clone());
    let f = ae.encoder.forward(g, store, p, b, true)?;
    let z = ae.projection.forward(g, store, f, b, true)?;
    let target = g.constant(teacher_feats.clone());
    let distill = g.mse(target, f)?;
    let (rec, perceptual) = reconstruction_terms(g, ae, store, true, teacher, teacher_store, z, batch, target)?;
    let sum = g.add(rec, perceptual)?;
    let weighted = g.scale(distill, T::of(lambda_distill))?;
    let total = g.add(sum, weighted)?;
    let report = Stage1LossReport {
        total: scalar(g, total),
        rec_mse: scalar(g, rec),
        perceptual: scalar(g, perceptual),
        distill: scalar(g, distill),
        lambda_distill,
    };
    Ok((total, report))
}

#[allow(clippy::too_many_arguments)]
fn reconstruction_terms<T: Float>(
    g: &mut Graph<T>,
    ae: &VgtAe,
    store: &ParamStore<T>,
    decoder_trainable: bool,
    teacher: &Teacher,
    teacher_store: &ParamStore<T>,
    z: Var,
    batch: &AeBatch<T>,
    teacher_target: Var,
) -> Result<(Var, Var)> {
    let b = batch.batch;
    let x_hat = ae.decoder.forward(g, store, z, b, decoder_trainable)?;
    let x = g.constant(batch.pixels.clone());
    let rec = g.mse(x_hat, x)?;
    let cfg = &ae.cfg.encoder;
    let patches = g.gather(x_hat, patch_index(b, cfg), &[b * cfg.tokens(), cfg.patch_dim()])?;
    let t_hat = teacher.encoder.forward(g, teacher_store, patches, b, false)?;
    let perceptual = g.mse(t_hat, teacher_target)?;
    Ok((rec, perceptual))
}

/// Decoder loss on noisy normalized latents:
/// `x̂ = D((φ(E(x)) − μ)/σ + ε)`, loss = pixel MSE + perceptual term.
///
/// The encoder must be frozen; `noise` is the pre-drawn `ε`.
#[allow(clippy::too_many_arguments)]
pub fn stage2_loss<T: Float>(
    g: &mut Graph<T>,
    ae: &VgtAe,
    store: &ParamStore<T>,
    trainable: Trainable,
    teacher: &Teacher,
    teacher_store: &ParamStore<T>,
    batch: &AeBatch<T>,
    teacher_feats: &Tensor<T>,
    stats: &LatentStats,
    noise: &Tensor<T>,
) -> Result<(Var, Stage2LossReport)> {
    if trainable.encoder {
        return Err(Error::EncoderNotFrozen);
    }
    check_teacher(ae, teacher, teacher_feats, batch.batch)?;
    let p = g.constant(batch.patches.clone());
    let f = ae.encoder.forward(g, store, p, batch.batch, false)?;
    let z = ae.projection.forward(g, store, f, batch.batch, trainable.projection)?;
    let (scale, shift) = stats.affine::<T>();
    let z_norm = g.affine_cols(z, &scale, &shift)?;
    stage2_tail(g, ae, store, trainable.decoder, teacher, teacher_store, z_norm, batch, teacher_feats, noise)
}

/// [`stage2_loss`] with precomputed normalized latents `[B·N, d_z]`; only the
/// decoder is involved.
#[allow(clippy::too_many_arguments)]
pub fn stage2_loss_from_latents<T: Float>(
    g: &mut Graph<T>,
    ae: &VgtAe,
    store: &ParamStore<T>,
    teacher: &Teacher,
    teacher_store: &ParamStore<T>,
    z_norm: &Tensor<T>,
    batch: &AeBatch<T>,
    teacher_feats: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<(Var, Stage2LossReport)> {
    check_teacher(ae, teacher, teacher_feats, batch.batch)?;
    let z = g.constant(z_norm.clone());
    stage2_tail(g, ae, store, true, teacher, teacher_store, z, batch, teacher_feats, noise)
}

#[allow(clippy::too_many_arguments)]
fn stage2_tail<T: Float>(
    g: &mut Graph<T>,
    ae: &VgtAe,
    store: &ParamStore<T>,
    decoder_trainable: bool,
    teacher: &Teacher,
    teacher_store: &ParamStore<T>,
    z_norm: Var,
    batch: &AeBatch<T>,
    teacher_feats: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<(Var, Stage2LossReport)> {
    if noise.shape() != g.shape(z_norm) {
        return Err(Error::Shape(format!("noise {:?} for latents {:?}", noise.shape(), g.shape(z_norm))));
    }
    let eps = g.constant(noise.clone());
    let z_noisy = g.add(z_norm, eps)?;
    let target = g.constant(teacher_feats.clone());
    let (rec, perceptual) =
        reconstruction_terms(g, ae, store, decoder_trainable, teacher, teacher_store, z_noisy, batch, target)?;
    let total = g.add(rec, perceptual)?;
    let report =
        Stage2LossReport { total: scalar(g, total), rec_mse: scalar(g, rec), perceptual: scalar(g, perceptual) };
    Ok((total, report))
}
