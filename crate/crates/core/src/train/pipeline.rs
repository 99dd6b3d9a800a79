use rand::seq::index::sample;

use super::config::TrainConfig;
use super::log::MetricLog;
use super::optim::{adamw_step, cosine_lr, Ema, OptimizerState};
use crate::data::{ClassId, Dataset, Image};
use crate::error::{Error, Result};
use crate::flowhead::FlowHead;
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::queryar::{ar_flow_loss, build_training_sequence, sample_permutation, QueryAr, SampleSpec};
use crate::rng::{mix_seed, stream};
use crate::vgtae::{
    noise_tensor, patchify, stage1_loss, stage2_loss, stage2_loss_from_latents, AeBatch, LatentGrid, LatentStats,
    Teacher, Trainable, VgtAe,
};

const SALT_TEACHER: u64 = 0x7465_6163;
const SALT_AE: u64 = 0x6165_3031;
const SALT_STAGE2: u64 = 0x6165_3032;
const SALT_AR: u64 = 0x6172_3031;
const SALT_FINETUNE: u64 = 0x6674_3031;
const SALT_INIT: u64 = 0x696e_6974;

/// Batch of `b` distinct indices out of `n`, a pure function of its coordinates.
pub fn batch_indices(seed: u64, salt: u64, step: usize, n: usize, b: usize) -> Vec<usize> {
    sample(&mut stream(&[seed, salt, step as u64]), n, b.min(n)).into_vec()
}

/// Fraction of predictions whose joint (shape, color, position) id matches.
pub fn joint_accuracy(pred: &[ClassId], truth: &[ClassId]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

fn pick<'a>(images: &[&'a Image], idx: &[usize]) -> Vec<&'a Image> {
    idx.iter().map(|&i| images[i]).collect()
}

/// Rows `i·n..(i+1)·n` of `t` for every `i` in `idx`.
fn pick_blocks(t: &Tensor, idx: &[usize], n: usize) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * n * c);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * n * c..(i + 1) * n * c]);
    }
    Tensor::new(&[idx.len() * n, c], data).expect("block sizes")
}

#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub teacher: Teacher,
    pub store: ParamStore,
}

impl TeacherModel {
    pub fn from_store(cfg: &TrainConfig, store: ParamStore) -> Result<Self> {
        let teacher = Teacher::new(cfg.encoder())?;
        super::check_layout(&store, &teacher.init(&mut stream(&[0])))?;
        Ok(Self { teacher, store })
    }

    /// Token features `[M·N, d]` used as distillation and perceptual targets.
    pub fn token_features(&self, data: &Dataset) -> Result<Tensor> {
        self.teacher.token_features(&self.store, &data.images())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(joint_accuracy(&self.teacher.classify(&self.store, &data.images())?, &data.class_ids()))
    }
}

pub struct TeacherRun {
    pub model: TeacherModel,
    pub val_accuracy: f64,
    pub log: MetricLog,
}

pub fn train_teacher(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<TeacherRun> {
    cfg.validate()?;
    let teacher = Teacher::new(cfg.encoder())?;
    let mut store = teacher.init(&mut stream(&[cfg.seed, SALT_TEACHER, SALT_INIT]));
    let images = train.images();
    let labels = train.class_ids();
    let hp = cfg.adamw();
    let mut opt = OptimizerState::new();
    let mut log = MetricLog::new(&["loss_total"], cfg.log_every, cfg.log_wall_time);
    let steps = cfg.teacher_steps;
    for step in 0..steps {
        let idx = batch_indices(cfg.seed, SALT_TEACHER, step, train.len(), cfg.teacher_batch);
        let lab: Vec<ClassId> = idx.iter().map(|&i| labels[i]).collect();
        let mut g = Graph::new();
        let p = g.constant(patchify(&pick(&images, &idx), teacher.cfg())?);
        let loss = teacher.classification_loss(&mut g, &store, p, &lab, true)?;
        let grads = g.backward(loss)?.into_params(&g);
        let lr = cosine_lr(step, steps, cfg.teacher_lr, cfg.warmup);
        adamw_step(&mut store, &grads, &mut opt, lr, &hp)?;
        log.record(step, &[g.value(loss).item() as f64], lr, step + 1 == steps);
    }
    let model = TeacherModel { teacher, store };
    let val_accuracy = model.accuracy(val)?;
    Ok(TeacherRun { model, val_accuracy, log })
}

/// Tokenizer weights plus, after stage 2, the frozen latent statistics.
#[derive(Clone, Debug)]
pub struct AeModel {
    pub ae: VgtAe,
    pub store: ParamStore,
    pub stats: Option<LatentStats>,
}

const STATS_MEAN: &str = "stats.mean";
const STATS_STD: &str = "stats.std";

impl AeModel {
    /// Parameters and statistics as one store for checkpointing.
    pub fn to_store(&self) -> ParamStore {
        let mut s = self.store.clone();
        if let Some(st) = &self.stats {
            let d = st.dim();
            s.insert(STATS_MEAN, Tensor::new(&[d], st.mean.clone()).expect("dim"));
            s.insert(STATS_STD, Tensor::new(&[d], st.std.clone()).expect("dim"));
        }
        s
    }

    pub fn from_store(cfg: &TrainConfig, mut store: ParamStore) -> Result<Self> {
        let ae = VgtAe::new(cfg.ae())?;
        let stats = match (store.remove(STATS_MEAN), store.remove(STATS_STD)) {
            (Some(m), Some(s)) => Some(LatentStats { mean: m.into_data(), std: s.into_data() }),
            (None, None) => None,
            _ => return Err(Error::format("checkpoint", "incomplete latent statistics")),
        };
        super::check_layout(&store, &ae.init(&mut stream(&[0])))?;
        Ok(Self { ae, store, stats })
    }

    pub fn stats(&self) -> Result<&LatentStats> {
        self.stats.as_ref().ok_or_else(|| Error::invalid("tokenizer has no stage-2 latent statistics"))
    }

    /// Normalized latents under the frozen statistics.
    pub fn normalized_latents(&self, images: &[&Image]) -> Result<Vec<LatentGrid>> {
        let stats = self.stats()?;
        self.ae.latents(&self.store, images)?.iter().map(|z| stats.normalize(z)).collect()
    }

    /// Decodes normalized latents (the AR output space) to images; after
    /// stage 2 the decoder consumes them directly.
    pub fn decode_normalized(&self, latents: &[LatentGrid]) -> Result<Vec<Image>> {
        self.stats()?;
        self.ae.decode(&self.store, latents)
    }

    /// Encode and decode, through the normalized space when statistics exist.
    pub fn reconstruct(&self, images: &[&Image]) -> Result<Vec<Image>> {
        match &self.stats {
            Some(_) => self.decode_normalized(&self.normalized_latents(images)?),
            None => self.ae.reconstruct(&self.store, images),
        }
    }

    /// Pooled encoder features `[M, d]`, the representation probed for semantics.
    pub fn pooled_features(&self, images: &[&Image]) -> Result<Tensor> {
        let f = self.ae.encode(&self.store, images)?;
        let n = self.ae.tokens();
        let d = f.cols();
        let mut out = vec![0.0f32; images.len() * d];
        for (i, o) in out.chunks_exact_mut(d).enumerate() {
            for r in 0..n {
                for (a, &v) in o.iter_mut().zip(f.row(i * n + r)) {
                    *a += v;
                }
            }
            o.iter_mut().for_each(|a| *a /= n as f32);
        }
        Tensor::new(&[images.len(), d], out)
    }
}

pub struct AeRun {
    pub model: AeModel,
    pub log: MetricLog,
}

/// Stage 1: encoder initialized from the teacher, trained jointly with the
/// projection and decoder on reconstruction, perceptual and distillation terms.
pub fn train_ae_stage1(cfg: &TrainConfig, train: &Dataset, teacher: &TeacherModel, feats: &Tensor) -> Result<AeRun> {
    cfg.validate()?;
    let ae = VgtAe::new(cfg.ae())?;
    let mut store = ae.init(&mut stream(&[cfg.seed, SALT_AE, SALT_INIT]));
    store.merge(&teacher.teacher.export_encoder(&teacher.store, "enc"));
    let n = ae.tokens();
    if feats.rows() != train.len() * n {
        return Err(Error::Shape(format!("{} teacher feature rows for {} images", feats.rows(), train.len())));
    }
    let images = train.images();
    let hp = cfg.adamw();
    let mut opt = OptimizerState::new();
    let mut log = MetricLog::new(&["loss_total", "rec_mse", "perceptual", "distill"], cfg.log_every, cfg.log_wall_time);
    let steps = cfg.ae_steps;
    for step in 0..steps {
        let idx = batch_indices(cfg.seed, SALT_AE, step, train.len(), cfg.ae_batch);
        let batch = AeBatch::new(&pick(&images, &idx), &cfg.encoder())?;
        let tf = pick_blocks(feats, &idx, n);
        let mut g = Graph::new();
        let (loss, r) =
            stage1_loss(&mut g, &ae, &store, &teacher.teacher, &teacher.store, &batch, &tf, cfg.lambda_distill)?;
        let grads = g.backward(loss)?.into_params(&g);
        let lr = cosine_lr(step, steps, cfg.ae_lr, cfg.warmup);
        adamw_step(&mut store, &grads, &mut opt, lr, &hp)?;
        log.record(step, &[r.total, r.rec_mse, r.perceptual, r.distill], lr, step + 1 == steps);
    }
    Ok(AeRun { model: AeModel { ae, store, stats: None }, log })
}

/// Stage 2: the encoder is frozen, latent statistics are computed once on the
/// training set and frozen, and the decoder learns to reconstruct from noisy
/// normalized latents. The projection is trained only when
/// `stage2_train_projection` is set.
pub fn train_ae_stage2(cfg: &TrainConfig, train: &Dataset, stage1: &AeModel, teacher: &TeacherModel, feats: &Tensor) -> Result<AeRun> {
    cfg.validate()?;
    let ae = stage1.ae.clone();
    if ae.cfg != cfg.ae() {
        return Err(Error::Config("stage-1 tokenizer does not match the configured architecture".into()));
    }
    let mut store = stage1.store.clone();
    let n = ae.tokens();
    let dz = ae.cfg.latent_dim;
    let images = train.images();
    let latents = ae.latents(&store, &images)?;
    let stats = LatentStats::compute(&latents)?;
    ae.decoder.fold_input_affine(&mut store, &stats.mean, &stats.std)?;
    let z_norm: Tensor = LatentGrid::stack(&latents.iter().map(|z| stats.normalize(z)).collect::<Result<Vec<_>>>()?)?;
    let hp = cfg.adamw();
    let mut opt = OptimizerState::new();
    let mut log = MetricLog::new(&["loss_total", "rec_mse", "perceptual"], cfg.log_every, cfg.log_wall_time);
    let steps = cfg.stage2_steps;
    for step in 0..steps {
        let idx = batch_indices(cfg.seed, SALT_STAGE2, step, train.len(), cfg.stage2_batch);
        let batch = AeBatch::new(&pick(&images, &idx), &cfg.encoder())?;
        let tf = pick_blocks(feats, &idx, n);
        let noise = noise_tensor(&[idx.len() * n, dz], cfg.sigma_noise, &mut stream(&[cfg.seed, SALT_STAGE2, step as u64, 1]))?;
        let mut g = Graph::new();
        let (loss, r) = if cfg.stage2_train_projection {
            let t = Trainable::PROJECTION_AND_DECODER;
            stage2_loss(&mut g, &ae, &store, t, &teacher.teacher, &teacher.store, &batch, &tf, &stats, &noise)?
        } else {
            let z = pick_blocks(&z_norm, &idx, n);
            stage2_loss_from_latents(&mut g, &ae, &store, &teacher.teacher, &teacher.store, &z, &batch, &tf, &noise)?
        };
        let grads = g.backward(loss)?.into_params(&g);
        let lr = cosine_lr(step, steps, cfg.stage2_lr, cfg.warmup);
        adamw_step(&mut store, &grads, &mut opt, lr, &hp)?;
        log.record(step, &[r.total, r.rec_mse, r.perceptual], lr, step + 1 == steps);
    }
    Ok(AeRun { model: AeModel { ae, store, stats: Some(stats) }, log })
}

/// Backbone and flow head in one store (`ar.*`, `head.*`) plus EMA weights.
#[derive(Clone, Debug)]
pub struct ArModel {
    pub ar: QueryAr,
    pub head: FlowHead,
    pub store: ParamStore,
    pub ema: ParamStore,
}

const EMA_PREFIX: &str = "ema.";

impl ArModel {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let ar = QueryAr::new(cfg.ar())?;
        let head = FlowHead::new(cfg.head(), "head")?;
        let mut store = ParamStore::new();
        let mut rng = stream(&[cfg.seed, SALT_AR, SALT_INIT]);
        ar.init(&mut store, &mut rng);
        head.init(&mut store, &mut rng);
        let ema = store.clone();
        Ok(Self { ar, head, store, ema })
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = self.store.clone();
        s.copy_prefix(&self.ema, "", EMA_PREFIX);
        s
    }

    pub fn from_store(cfg: &TrainConfig, all: &ParamStore) -> Result<Self> {
        let fresh = Self::new(cfg)?;
        let ema = all.filter_prefix(EMA_PREFIX);
        let mut store = all.clone();
        let ema_names: Vec<String> = ema.names().cloned().collect();
        for n in &ema_names {
            store.remove(n);
        }
        let mut ema_store = ParamStore::new();
        ema_store.copy_prefix(&ema, EMA_PREFIX, "");
        super::check_layout(&store, &fresh.store)?;
        super::check_layout(&ema_store, &fresh.store)?;
        Ok(Self { ar: fresh.ar, head: fresh.head, store, ema: ema_store })
    }

    /// Samples normalized latent grids with the EMA weights.
    pub fn generate(&self, classes: &[ClassId], spec: &SampleSpec) -> Result<Vec<LatentGrid>> {
        self.ar.generate(&self.ema, &self.head, classes, spec)
    }
}

pub struct ArRun {
    pub model: ArModel,
    pub log: MetricLog,
}

/// Flow-matching training of the backbone and head on frozen normalized latents.
pub fn train_ar(cfg: &TrainConfig, latents: &[LatentGrid], classes: &[ClassId]) -> Result<ArRun> {
    cfg.validate()?;
    let model = ArModel::new(cfg)?;
    fit_ar(cfg, model, latents, classes, cfg.ar_steps, cfg.ar_lr, SALT_AR)
}

/// Continues training from `model` at `finetune_lr` for `finetune_steps`.
pub fn finetune(cfg: &TrainConfig, model: ArModel, latents: &[LatentGrid], classes: &[ClassId]) -> Result<ArRun> {
    cfg.validate()?;
    fit_ar(cfg, model, latents, classes, cfg.finetune_steps, cfg.finetune_lr, SALT_FINETUNE)
}

fn fit_ar(
    cfg: &TrainConfig,
    mut model: ArModel,
    latents: &[LatentGrid],
    classes: &[ClassId],
    steps: usize,
    base_lr: f64,
    salt: u64,
) -> Result<ArRun> {
    if latents.len() != classes.len() || latents.is_empty() {
        return Err(Error::Shape(format!("{} latent grids for {} labels", latents.len(), classes.len())));
    }
    let n = model.ar.cfg.tokens;
    if latents[0].len() != n || latents[0].dim() != model.ar.cfg.latent_dim {
        return Err(Error::Shape("latent grids do not match the AR configuration".into()));
    }
    let hp = cfg.adamw();
    let schedule = cfg.schedule();
    let mut opt = OptimizerState::new();
    let mut ema = Ema::new(&model.ema, cfg.ema_decay);
    let mut log = MetricLog::new(&["loss_total"], cfg.log_every, cfg.log_wall_time);
    for step in 0..steps {
        let idx = batch_indices(cfg.seed, salt, step, latents.len(), cfg.ar_batch);
        let mut rng = stream(&[cfg.seed, salt, step as u64, 1]);
        let orders = idx
            .iter()
            .map(|_| if cfg.raster_order { Ok((0..n).collect()) } else { sample_permutation(n, &mut rng) })
            .collect::<Result<Vec<_>>>()?;
        let grids: Vec<LatentGrid> = idx.iter().map(|&i| latents[i].clone()).collect();
        let cls: Vec<ClassId> = idx.iter().map(|&i| classes[i]).collect();
        let seq = build_training_sequence(&grids, &orders, &cls)?;
        let mut g = Graph::new();
        let loss =
            ar_flow_loss(&mut g, &model.ar, &model.head, &model.store, &seq, cfg.fm_repeats, &schedule, &mut rng, true)?;
        let grads = g.backward(loss)?.into_params(&g);
        let lr = cosine_lr(step, steps, base_lr, cfg.warmup);
        adamw_step(&mut model.store, &grads, &mut opt, lr, &hp)?;
        ema.update(&model.store)?;
        log.record(step, &[g.value(loss).item() as f64], lr, step + 1 == steps);
    }
    model.ema = ema.store(&model.store)?;
    Ok(ArRun { model, log })
}

/// Sampling settings from the configuration.
pub fn sample_spec(cfg: &TrainConfig, seed: u64, group_size: usize) -> SampleSpec {
    SampleSpec { group_size, steps: cfg.sample_steps, seed: mix_seed(seed, 0x7361_6d70), schedule: cfg.schedule(), raster: cfg.raster_order }
}
