//! The `vgt` command line: data generation, every training stage, sampling,
//! evaluation, the gradient suite and the noise sweep.
//!
//! Configuration resolves as defaults (or `--preset`), then `--config`, then
//! each `--set key=value`. Every training, sampling and evaluation command
//! writes the resolved configuration next to its outputs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 missing artifact,
//! 3 numeric failure.

pub mod grad_suite;
mod sweep;

pub use sweep::{all_classes, sweep_csv, sweep_noise, SweepInputs, SweepRow, SWEEP_SAMPLE_SEED};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::data::{gen_shapes, write_dataset, write_ppm, ClassId, Dataset, Image, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{
    cluster_purity, feature_distance, grade_conditional_samples, linear_probe, pixel_features, reconstruction_report,
    MetricsReport, ProbeConfig,
};
use crate::numerics::Tensor;
use crate::rng::{mix_seed, stream};
use crate::train::{
    finetune, load_checkpoint, sample_spec, save_checkpoint, train_ae_stage1, train_ae_stage2, train_ar, train_teacher,
    AeModel, ArModel, TeacherModel, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const AE_STAGE1_CKPT: &str = "ae_stage1.ckpt";
pub const AE_STAGE2_CKPT: &str = "ae_stage2.ckpt";
pub const AR_CKPT: &str = "ar.ckpt";
pub const AR_FINETUNED_CKPT: &str = "ar_finetuned.ckpt";

const NOISE_SALT: u64 = 0x6e6f_6973;
/// Fine-tuning draws a second training set of the same size.
const FINETUNE_DATA_SALT: u64 = 0x6674_6461;

#[derive(Parser, Debug)]
#[command(name = "vgt", version, about = "Semantic tokenizer, position-query autoregression and flow-head sampling")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named base configuration (`default` or `quick`).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Directory holding checkpoints and logs.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Recon,
    Generate,
    Probe,
    Purity,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureSource {
    Teacher,
    Ae,
    Pixels,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a synthetic shapes dataset as PPM files plus a manifest.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the semantic teacher classifier.
    PretrainTeacher,
    /// Trains the tokenizer: stage 1 (joint) or stage 2 (decoder on noisy latents).
    TrainAe {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
    /// Trains the autoregressive generator and flow head on stage-2 latents.
    TrainAr,
    /// Continues generator training on a second dataset at the fine-tuning learning rate.
    Finetune,
    /// Generates class-conditional images.
    Sample {
        /// Class id in 0..64, or `all` to cycle through every class.
        #[arg(long, default_value = "all")]
        cond: String,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        group_size: usize,
        /// Sampler steps; defaults to `sample_steps` from the configuration.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the fine-tuned generator checkpoint.
        #[arg(long)]
        finetuned: bool,
        /// Decode through the one-token-at-a-time reference path.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Computes metrics and writes them as CSV plus a printed summary.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        /// Tokenizer stage for `recon`.
        #[arg(long, default_value_t = 2)]
        stage: u8,
        /// Evaluate `recon` on an identity autoencoder instead of a checkpoint.
        #[arg(long)]
        identity: bool,
        /// Features for `probe` and `purity`.
        #[arg(long, value_enum, default_value = "ae")]
        features: FeatureSource,
        /// Clusters for `purity`.
        #[arg(long, default_value_t = NUM_CLASSES)]
        k: usize,
        /// Samples per class for `generate`.
        #[arg(long, default_value_t = 2)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        group_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        finetuned: bool,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the 64-bit finite-difference gradient suite.
    GradCheck {
        /// Corrupts the backward pass of one op (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Trains stage 2 and a generator per noise level and tabulates the metrics.
    SweepNoise {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Generated samples per point, cycling through classes.
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact(_) => EXIT_MISSING,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        Error::NonFinite { .. } | Error::FullyMaskedRow { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Defaults or preset, then the config file, then `--set` overrides.
pub fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.preset {
        Some(p) => TrainConfig::preset(p)?,
        None => TrainConfig::default(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.clone()))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: TrainConfig,
    dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails with the first missing prerequisite before any compute.
    fn require(&self, names: &[&str]) -> Result<()> {
        for n in names {
            let p = self.path(n);
            if !p.is_file() {
                return Err(Error::MissingArtifact(p));
            }
        }
        Ok(())
    }

    fn echo_config(&self, dir: &Path, command: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{command}.config")), self.cfg.render())?;
        Ok(())
    }

    fn datasets(&self) -> Result<(Dataset, Dataset)> {
        Ok((gen_shapes(self.cfg.train_size, self.cfg.seed, Split::Train)?, gen_shapes(self.cfg.val_size, self.cfg.seed, Split::Val)?))
    }

    fn teacher(&self) -> Result<TeacherModel> {
        TeacherModel::from_store(&self.cfg, load_checkpoint(self.path(TEACHER_CKPT))?)
    }

    fn ae(&self, stage: u8) -> Result<AeModel> {
        let name = if stage == 1 { AE_STAGE1_CKPT } else { AE_STAGE2_CKPT };
        AeModel::from_store(&self.cfg, load_checkpoint(self.path(name))?)
    }

    fn ar(&self, finetuned: bool) -> Result<ArModel> {
        let name = if finetuned { AR_FINETUNED_CKPT } else { AR_CKPT };
        ArModel::from_store(&self.cfg, &load_checkpoint(self.path(name))?)
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    if let Command::GenData { n, seed, split, out } = &cli.command {
        let split = match split {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        };
        let rows = write_dataset(&gen_shapes(*n, *seed, split)?, out)?;
        println!("wrote {} images to {}", rows.len(), out.display());
        return Ok(EXIT_OK);
    }
    if let Command::GradCheck { inject_fault } = &cli.command {
        return grad_check_cmd(inject_fault.as_deref());
    }
    let ctx = Ctx { cfg: resolve_config(cli)?, dir: cli.run_dir.clone() };
    match &cli.command {
        Command::GenData { .. } | Command::GradCheck { .. } => unreachable!("handled above"),
        Command::PretrainTeacher => pretrain_teacher(&ctx),
        Command::TrainAe { stage: 1 } => train_stage1(&ctx),
        Command::TrainAe { .. } => train_stage2(&ctx),
        Command::TrainAr => train_ar_cmd(&ctx),
        Command::Finetune => finetune_cmd(&ctx),
        Command::Sample { cond, count, group_size, steps, seed, finetuned, sequential, out } => {
            let classes = parse_cond(cond, *count)?;
            sample_cmd(&ctx, &classes, *group_size, *steps, *seed, *finetuned, *sequential, out)
        }
        Command::Eval { task, stage, identity, features, k, per_class, group_size, seed, finetuned, out } => {
            let out = out.clone().unwrap_or_else(|| ctx.dir.clone());
            let report = match task {
                EvalTask::Recon => eval_recon(&ctx, *stage, *identity)?,
                EvalTask::Generate => eval_generate(&ctx, *per_class, *group_size, *seed, *finetuned)?,
                EvalTask::Probe => eval_probe(&ctx, *features)?,
                EvalTask::Purity => eval_purity(&ctx, *features, *k)?,
            };
            let name = format!("{task:?}").to_lowercase();
            ctx.echo_config(&out, &format!("eval_{name}"))?;
            fs::write(out.join(format!("eval_{name}.csv")), report.to_csv())?;
            print!("{}", report.to_text());
            Ok(EXIT_OK)
        }
        Command::SweepNoise { values, seeds, samples, out } => sweep_cmd(&ctx, values, seeds, *samples, out.as_deref()),
    }
}

fn parse_cond(cond: &str, count: usize) -> Result<Vec<ClassId>> {
    if count == 0 {
        return Err(Error::invalid("count must be ≥ 1"));
    }
    if cond == "all" {
        return Ok(all_classes(count));
    }
    let c: usize = cond.parse().map_err(|_| Error::invalid(format!("--cond must be a class id or `all`, got `{cond}`")))?;
    if c >= NUM_CLASSES {
        return Err(Error::invalid(format!("class id {c} out of range 0..{NUM_CLASSES}")));
    }
    Ok(vec![ClassId(c); count])
}

fn pretrain_teacher(ctx: &Ctx) -> Result<i32> {
    let (train, val) = ctx.datasets()?;
    ctx.echo_config(&ctx.dir, "pretrain-teacher")?;
    let t0 = Instant::now();
    let run = train_teacher(&ctx.cfg, &train, &val)?;
    save_checkpoint(&run.model.store, ctx.path(TEACHER_CKPT))?;
    run.log.write_csv(ctx.path("teacher.csv"))?;
    println!("teacher: val accuracy {:.4} ({:.1}s)", run.val_accuracy, t0.elapsed().as_secs_f64());
    Ok(EXIT_OK)
}

fn train_stage1(ctx: &Ctx) -> Result<i32> {
    ctx.require(&[TEACHER_CKPT])?;
    let teacher = ctx.teacher()?;
    let (train, _) = ctx.datasets()?;
    ctx.echo_config(&ctx.dir, "train-ae-stage1")?;
    let t0 = Instant::now();
    let feats = teacher.token_features(&train)?;
    let run = train_ae_stage1(&ctx.cfg, &train, &teacher, &feats)?;
    save_checkpoint(&run.model.to_store(), ctx.path(AE_STAGE1_CKPT))?;
    run.log.write_csv(ctx.path("ae_stage1.csv"))?;
    println!("tokenizer stage 1: {} steps ({:.1}s)", ctx.cfg.ae_steps, t0.elapsed().as_secs_f64());
    Ok(EXIT_OK)
}

fn train_stage2(ctx: &Ctx) -> Result<i32> {
    ctx.require(&[AE_STAGE1_CKPT, TEACHER_CKPT])?;
    let teacher = ctx.teacher()?;
    let stage1 = ctx.ae(1)?;
    let (train, _) = ctx.datasets()?;
    ctx.echo_config(&ctx.dir, "train-ae-stage2")?;
    let t0 = Instant::now();
    let feats = teacher.token_features(&train)?;
    let run = train_ae_stage2(&ctx.cfg, &train, &stage1, &teacher, &feats)?;
    save_checkpoint(&run.model.to_store(), ctx.path(AE_STAGE2_CKPT))?;
    run.log.write_csv(ctx.path("ae_stage2.csv"))?;
    println!("tokenizer stage 2: {} steps ({:.1}s)", ctx.cfg.stage2_steps, t0.elapsed().as_secs_f64());
    Ok(EXIT_OK)
}

fn train_ar_cmd(ctx: &Ctx) -> Result<i32> {
    ctx.require(&[AE_STAGE2_CKPT])?;
    let ae = ctx.ae(2)?;
    let (train, _) = ctx.datasets()?;
    ctx.echo_config(&ctx.dir, "train-ar")?;
    let t0 = Instant::now();
    let latents = ae.normalized_latents(&train.images())?;
    let run = train_ar(&ctx.cfg, &latents, &train.class_ids())?;
    save_checkpoint(&run.model.to_store(), ctx.path(AR_CKPT))?;
    run.log.write_csv(ctx.path("ar.csv"))?;
    println!("generator: {} steps ({:.1}s)", ctx.cfg.ar_steps, t0.elapsed().as_secs_f64());
    Ok(EXIT_OK)
}

fn finetune_cmd(ctx: &Ctx) -> Result<i32> {
    ctx.require(&[AE_STAGE2_CKPT, AR_CKPT])?;
    let ae = ctx.ae(2)?;
    let model = ctx.ar(false)?;
    let data = gen_shapes(ctx.cfg.train_size, mix_seed(ctx.cfg.seed, FINETUNE_DATA_SALT), Split::Train)?;
    ctx.echo_config(&ctx.dir, "finetune")?;
    let t0 = Instant::now();
    let latents = ae.normalized_latents(&data.images())?;
    let run = finetune(&ctx.cfg, model, &latents, &data.class_ids())?;
    save_checkpoint(&run.model.to_store(), ctx.path(AR_FINETUNED_CKPT))?;
    run.log.write_csv(ctx.path("finetune.csv"))?;
    println!("fine-tuning: {} steps ({:.1}s)", ctx.cfg.finetune_steps, t0.elapsed().as_secs_f64());
    Ok(EXIT_OK)
}

/// Generates images and returns them with the backbone forward-pass count.
fn generate_images(
    ctx: &Ctx,
    classes: &[ClassId],
    group_size: usize,
    steps: Option<usize>,
    seed: u64,
    finetuned: bool,
    sequential: bool,
) -> Result<(Vec<Image>, usize)> {
    let tokens = ctx.cfg.ar().tokens;
    if group_size == 0 || group_size > tokens {
        return Err(Error::invalid(format!("group size must be in 1..={tokens}, got {group_size}")));
    }
    ctx.require(&[AE_STAGE2_CKPT, if finetuned { AR_FINETUNED_CKPT } else { AR_CKPT }])?;
    let ae = ctx.ae(2)?;
    let model = ctx.ar(finetuned)?;
    let mut spec = sample_spec(&ctx.cfg, seed, group_size);
    if let Some(s) = steps {
        spec.steps = s;
    }
    model.ar.reset_passes();
    let z = if sequential {
        model.ar.generate_sequential(&model.ema, &model.head, classes, &spec)?
    } else {
        model.generate(classes, &spec)?
    };
    Ok((ae.decode_normalized(&z)?, model.ar.forward_passes()))
}

#[allow(clippy::too_many_arguments)]
fn sample_cmd(
    ctx: &Ctx,
    classes: &[ClassId],
    group_size: usize,
    steps: Option<usize>,
    seed: u64,
    finetuned: bool,
    sequential: bool,
    out: &Path,
) -> Result<i32> {
    let (images, passes) = generate_images(ctx, classes, group_size, steps, seed, finetuned, sequential)?;
    ctx.echo_config(out, "sample")?;
    let mut index = String::from("index\tclass\tfilename\n");
    for (i, (img, c)) in images.iter().zip(classes).enumerate() {
        let name = format!("{i:05}.ppm");
        write_ppm(img, out.join(&name))?;
        writeln!(index, "{i}\t{}\t{name}", c.0).unwrap();
    }
    fs::write(out.join("samples.tsv"), index)?;
    println!("wrote {} samples to {} ({passes} backbone forward passes)", images.len(), out.display());
    Ok(EXIT_OK)
}

/// Uniform-noise images of the dataset size, a reference for feature distances.
pub fn noise_images(count: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| {
            let mut r = stream(&[mix_seed(seed, NOISE_SALT), i as u64]);
            Image::from_data(size, size, (0..size * size * 3).map(|_| r.gen::<f32>()).collect())
        })
        .collect()
}

fn eval_recon(ctx: &Ctx, stage: u8, identity: bool) -> Result<MetricsReport> {
    if !identity {
        ctx.require(&[if stage == 1 { AE_STAGE1_CKPT } else { AE_STAGE2_CKPT }])?;
    }
    ctx.require(&[TEACHER_CKPT])?;
    let teacher = ctx.teacher()?;
    let (_, val) = ctx.datasets()?;
    let vi = val.images();
    let recon: Vec<Image> = if identity {
        vi.iter().map(|&x| x.clone()).collect()
    } else {
        let ae = ctx.ae(stage)?;
        ae.reconstruct(&vi)?
    };
    let rr: Vec<&Image> = recon.iter().collect();
    let r = reconstruction_report(&vi, &rr, &teacher.teacher, &teacher.store)?;
    let noise = noise_images(vi.len(), vi[0].height(), ctx.cfg.seed)?;
    let nr: Vec<&Image> = noise.iter().collect();
    let mut m = MetricsReport::default();
    m.push("psnr", r.psnr);
    m.push("ssim", r.ssim);
    m.push("frechet", r.frechet);
    m.push("frechet_noise_reference", feature_distance(&vi, &nr, &teacher.teacher, &teacher.store)?);
    Ok(m)
}

fn eval_generate(ctx: &Ctx, per_class: usize, group_size: usize, seed: u64, finetuned: bool) -> Result<MetricsReport> {
    ctx.require(&[TEACHER_CKPT])?;
    let teacher = ctx.teacher()?;
    let classes = all_classes(per_class.max(1) * NUM_CLASSES);
    let (images, passes) = generate_images(ctx, &classes, group_size, None, seed, finetuned, false)?;
    let samples: Vec<(ClassId, Image)> = classes.iter().copied().zip(images).collect();
    let g = grade_conditional_samples(&teacher.teacher, &teacher.store, &samples)?;
    let (_, val) = ctx.datasets()?;
    let gen: Vec<&Image> = samples.iter().map(|(_, x)| x).collect();
    let mut m = MetricsReport::default();
    m.push("accuracy", g.overall);
    m.push("shape_accuracy", g.shape);
    m.push("color_accuracy", g.color);
    m.push("position_accuracy", g.position);
    m.push("frechet_vs_val", feature_distance(&val.images(), &gen, &teacher.teacher, &teacher.store)?);
    m.push("forward_passes", passes as f64);
    Ok(m)
}

fn features(ctx: &Ctx, source: FeatureSource, data: &Dataset) -> Result<Tensor> {
    let images = data.images();
    match source {
        FeatureSource::Pixels => pixel_features(&images),
        FeatureSource::Teacher => {
            ctx.require(&[TEACHER_CKPT])?;
            let t = ctx.teacher()?;
            t.teacher.pooled_features(&t.store, &images)
        }
        FeatureSource::Ae => {
            let stage = if ctx.path(AE_STAGE2_CKPT).is_file() { 2 } else { 1 };
            ctx.require(&[if stage == 1 { AE_STAGE1_CKPT } else { AE_STAGE2_CKPT }])?;
            ctx.ae(stage)?.pooled_features(&images)
        }
    }
}

fn labels(data: &Dataset) -> Vec<usize> {
    data.class_ids().iter().map(|c| c.0).collect()
}

fn eval_probe(ctx: &Ctx, source: FeatureSource) -> Result<MetricsReport> {
    let (_, val) = ctx.datasets()?;
    let f = features(ctx, source, &val)?;
    let mut m = MetricsReport::default();
    m.push("probe_accuracy", linear_probe(&f, &labels(&val), &ProbeConfig::default())?);
    Ok(m)
}

fn eval_purity(ctx: &Ctx, source: FeatureSource, k: usize) -> Result<MetricsReport> {
    let (_, val) = ctx.datasets()?;
    let f = features(ctx, source, &val)?;
    let mut m = MetricsReport::default();
    m.push("purity", cluster_purity(&f, &labels(&val), k)?);
    Ok(m)
}

fn grad_check_cmd(fault: Option<&str>) -> Result<i32> {
    let fault: Option<&'static str> = match fault {
        None => None,
        Some(op) => Some(
            grad_suite::OPS
                .iter()
                .copied()
                .find(|&o| o == op)
                .ok_or_else(|| Error::invalid(format!("unknown op `{op}`")))?,
        ),
    };
    let t0 = Instant::now();
    let losses = grad_suite::loss_suite(fault)?;
    for e in &losses {
        let worst = e.worst.as_ref().map_or(String::new(), |(n, i)| format!(" (worst {n}[{i}])"));
        let verdict = if e.passed() { "ok" } else { "FAIL" };
        println!("{:<12} max rel err {:.3e} over {} coords{worst}  {verdict}", e.name, e.max_rel_err, e.checked);
    }
    let failed = losses.iter().any(|e| !e.passed());
    if failed {
        let ops = grad_suite::op_suite(fault)?;
        let bad = grad_suite::offending_ops(&ops);
        if bad.is_empty() {
            println!("no single op check fails");
        } else {
            println!("offending op: {}", bad.join(", "));
        }
    }
    println!("grad-check {} in {:.1}s", if failed { "failed" } else { "passed" }, t0.elapsed().as_secs_f64());
    Ok(if failed { EXIT_NUMERIC } else { EXIT_OK })
}

fn sweep_cmd(ctx: &Ctx, values: &[f64], seeds: &[u64], samples: usize, out: Option<&Path>) -> Result<i32> {
    ctx.require(&[TEACHER_CKPT, AE_STAGE1_CKPT])?;
    let teacher = ctx.teacher()?;
    let stage1 = ctx.ae(1)?;
    let (train, val) = ctx.datasets()?;
    let out = out.map_or_else(|| ctx.dir.clone(), Path::to_path_buf);
    ctx.echo_config(&out, "sweep-noise")?;
    let feats = teacher.token_features(&train)?;
    let inputs = SweepInputs { cfg: &ctx.cfg, train: &train, val: &val, teacher: &teacher, feats: &feats, stage1: &stage1 };
    let rows = sweep_noise(&inputs, values, seeds, samples)?;
    let csv = sweep_csv(&rows);
    fs::write(out.join("sweep_noise.csv"), &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}
