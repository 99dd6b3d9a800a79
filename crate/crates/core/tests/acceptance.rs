//! End-to-end acceptance checks. Each test prints one `PASS` / `FAIL` line
//! with its measurements, then asserts.
//!
//! The heavy tests share one full pipeline run and are serialized behind a
//! lock, so wall-clock measurements are not inflated by sibling tests.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgt::cli::{self, grad_suite, sweep_noise, SweepInputs};
use vgt::data::{gen_shapes, psnr, ClassId, Dataset, Image, Split};
use vgt::eval::{feature_distance, grade_conditional_samples, linear_probe, mean_image, ProbeConfig};
use vgt::flowhead::{
    flow_sample, flow_sample_from, fm_loss, shift_timestep, standard_normal, FlowHead, FlowHeadConfig, FmDraw,
    LinearPathOracle, TimestepSchedule, REFERENCE_DIM,
};
use vgt::numerics::{Graph, ParamStore, Tensor};
use vgt::queryar::build_training_sequence;
use vgt::rng::stream;
use vgt::train::{
    adamw_step, load_checkpoint, sample_spec, train_ae_stage1, AdamW, AeModel, ArModel, OptimizerState, TeacherModel,
    TrainConfig,
};
use vgt::vgtae::LatentGrid;

const PIPELINE_BUDGET: Duration = Duration::from_secs(30 * 60);
const SWEEP_SIGMAS: [f64; 9] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
const SWEEP_SEEDS: [u64; 3] = [0, 1, 2];

fn report(ok: bool, name: &str, detail: String) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // straight to the process stdout so the line survives output capture
    let _ = std::io::stdout().write_all(line.as_bytes());
}

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn config_args() -> Vec<String> {
    ["--preset", "quick"].iter().map(|s| s.to_string()).collect()
}

fn cfg() -> TrainConfig {
    TrainConfig::quick()
}

/// Every stage through the command-line entry point, returning the wall time.
fn run_pipeline(dir: &Path) -> Duration {
    let t0 = Instant::now();
    let run = dir.to_str().unwrap().to_string();
    let samples = dir.join("samples").to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["pretrain-teacher"],
        vec!["train-ae", "--stage", "1"],
        vec!["train-ae", "--stage", "2"],
        vec!["train-ar"],
        vec!["finetune"],
        vec!["sample", "--count", "32", "--group-size", "4", "--out", &samples],
        vec!["eval", "--task", "recon"],
    ];
    for cmd in commands {
        let mut args = vec!["vgt".to_string(), "--run-dir".into(), run.clone()];
        args.extend(config_args());
        args.extend(cmd.iter().map(|s| s.to_string()));
        assert_eq!(cli::run(&args), 0, "vgt {}", cmd.join(" "));
    }
    t0.elapsed()
}

struct Pipeline {
    _dir: tempfile::TempDir,
    path: PathBuf,
    elapsed: Duration,
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let elapsed = run_pipeline(&path);
        Pipeline { _dir: dir, path, elapsed }
    })
}

struct Loaded {
    train: Dataset,
    val: Dataset,
    teacher: TeacherModel,
    stage1: AeModel,
    stage2: AeModel,
    ar: ArModel,
}

fn loaded() -> &'static Loaded {
    static L: OnceLock<Loaded> = OnceLock::new();
    L.get_or_init(|| {
        let p = &pipeline().path;
        let c = cfg();
        Loaded {
            train: gen_shapes(c.train_size, c.seed, Split::Train).unwrap(),
            val: gen_shapes(c.val_size, c.seed, Split::Val).unwrap(),
            teacher: TeacherModel::from_store(&c, load_checkpoint(p.join(cli::TEACHER_CKPT)).unwrap()).unwrap(),
            stage1: AeModel::from_store(&c, load_checkpoint(p.join(cli::AE_STAGE1_CKPT)).unwrap()).unwrap(),
            stage2: AeModel::from_store(&c, load_checkpoint(p.join(cli::AE_STAGE2_CKPT)).unwrap()).unwrap(),
            ar: ArModel::from_store(&c, &load_checkpoint(p.join(cli::AR_CKPT)).unwrap()).unwrap(),
        }
    })
}

#[test]
fn gradient_suite_is_accurate_and_fast() {
    let _s = serial();
    let t0 = Instant::now();
    let entries = grad_suite::loss_suite(None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    let worst = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let ok = names == ["stage1_loss", "stage2_loss", "fm_loss"] && entries.iter().all(|e| e.passed()) && secs < 60.0;
    let detail: Vec<String> = entries.iter().map(|e| format!("{} {:.2e}", e.name, e.max_rel_err)).collect();
    report(ok, "gradient suite", format!("{} (max {worst:.2e} < 1e-4), {secs:.1}s < 60s", detail.join(", ")));
    assert!(ok);
}

#[test]
fn timestep_shift_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.gen();
        let m: f64 = rng.gen_range(1.0..16384.0);
        let n: f64 = rng.gen_range(1.0..16384.0);
        let a = (m / n).sqrt();
        let want = a * t / (1.0 + (a - 1.0) * t);
        worst = worst.max((shift_timestep(t, m, n).unwrap() - want).abs());
    }
    let mut exact = true;
    for _ in 0..100 {
        let m: f64 = rng.gen_range(1.0..16384.0);
        let n: f64 = rng.gen_range(1.0..16384.0);
        let t: f64 = rng.gen();
        exact &= shift_timestep(0.0, m, n).unwrap() == 0.0;
        exact &= shift_timestep(1.0, m, n).unwrap() == 1.0;
        exact &= shift_timestep(t, m, m).unwrap() == t;
    }
    let ok = worst < 1e-12 && exact;
    report(ok, "timestep shift", format!("max deviation {worst:.1e} < 1e-12 over 1000 triples, endpoints and identity exact: {exact}"));
    assert!(ok);
}

fn point_mass_head_mae(target: &[f32], steps: u64) -> f32 {
    let d = target.len();
    let head =
        FlowHead::new(FlowHeadConfig { latent_dim: d, cond_dim: 1, width: 64, hidden_layers: 2, time_dim: 16 }, "head")
            .unwrap();
    let mut store = ParamStore::new();
    head.init(&mut store, &mut stream(&[11]));
    let schedule = TimestepSchedule::identity();
    let rows = 64;
    let z = Tensor::new(&[rows, d], (0..rows * d).map(|i| target[i % d]).collect()).unwrap();
    let cond = Tensor::zeros(&[rows, 1]);
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let mut opt = OptimizerState::new();
    for step in 0..steps {
        let draw = FmDraw::sample(rows, d, &schedule, &mut stream(&[12, step]));
        let mut g = Graph::new();
        let h = g.constant(cond.clone());
        let loss = fm_loss(&mut g, &head, &store, &z, h, &draw, true).unwrap();
        let grads = g.backward(loss).unwrap().into_params(&g);
        adamw_step(&mut store, &grads, &mut opt, 2e-3, &hp).unwrap();
    }
    let h = Tensor::zeros(&[512, 1]);
    let out = flow_sample(&head.field(&store), &h, d, 50, &mut stream(&[13]), &schedule).unwrap();
    out.data().iter().enumerate().map(|(i, &v)| (v - target[i % d]).abs()).sum::<f32>() / out.len() as f32
}

#[test]
fn flow_sampler_recovers_point_targets() {
    let _s = serial();
    let target = [0.9f32, -1.4, 0.2, 2.1, -0.6, 0.0, 1.3, -2.2];
    let h = Tensor::zeros(&[32, 1]);
    let mut worst = 0.0f32;
    for schedule in [TimestepSchedule::identity(), TimestepSchedule::new(512.0, REFERENCE_DIM)] {
        for steps in [1, 2, 3, 7, 16, 50, 128] {
            let eps: Tensor = standard_normal(&[32, target.len()], &mut stream(&[steps as u64]));
            let oracle = LinearPathOracle { target: target.to_vec() };
            let z = flow_sample_from(&oracle, &h, eps, steps, &schedule).unwrap();
            for (i, &v) in z.data().iter().enumerate() {
                worst = worst.max((v - target[i % target.len()]).abs());
            }
        }
    }
    let mae = point_mass_head_mae(&target, 2000);
    let ok = worst < 1e-6 && mae < 0.05;
    report(ok, "flow sampler", format!("oracle max error {worst:.1e} < 1e-6 for 1..128 steps; trained head MAE {mae:.4} < 0.05 after 2000 steps"));
    assert!(ok);
}

#[test]
fn stage_two_statistics_and_frozen_encoder() {
    let _s = serial();
    let l = loaded();
    let z = LatentGrid::stack::<f64>(&l.stage2.normalized_latents(&l.train.images()).unwrap()).unwrap();
    let (rows, d) = (z.rows(), z.cols());
    let mut worst_mean = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in 0..d {
        let col: Vec<f64> = (0..rows).map(|r| z.row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        lo = lo.min(std);
        hi = hi.max(std);
    }
    let enc1 = l.stage1.store.filter_prefix("enc.");
    let enc2 = l.stage2.store.filter_prefix("enc.");
    let identical = !enc1.is_empty()
        && enc1.len() == enc2.len()
        && enc1.iter().all(|(n, t)| enc2.get(n).map(|u| u.data() == t.data()).unwrap_or(false));
    let ok = worst_mean < 1e-5 && lo >= 0.999 && hi <= 1.001 && identical;
    report(
        ok,
        "latent statistics",
        format!("max |mean| {worst_mean:.1e} < 1e-5, std in [{lo:.5}, {hi:.5}] ⊂ [0.999, 1.001], encoder bit-identical: {identical}"),
    );
    assert!(ok);
}

fn val_mse(model: &AeModel, val: &Dataset) -> f64 {
    let vi = val.images();
    let recon = model.reconstruct(&vi).unwrap();
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in vi.iter().zip(&recon) {
        for (a, b) in x.data().iter().zip(y.data()) {
            s += ((a - b) as f64).powi(2);
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn distillation_preserves_semantics() {
    let _s = serial();
    let l = loaded();
    let mut c = cfg();
    c.lambda_distill = 0.0;
    let feats = l.teacher.token_features(&l.train).unwrap();
    let without = train_ae_stage1(&c, &l.train, &l.teacher, &feats).unwrap().model;
    let vi = l.val.images();
    let labels: Vec<usize> = l.val.class_ids().iter().map(|c| c.0).collect();
    let probe = |m: &AeModel| linear_probe(&m.pooled_features(&vi).unwrap(), &labels, &ProbeConfig::default()).unwrap();
    let (p_with, p_without) = (probe(&l.stage1), probe(&without));
    let (mse_with, mse_without) = (val_mse(&l.stage1, &l.val), val_mse(&without, &l.val));
    let ok = p_with >= p_without + 0.02 && mse_without <= mse_with;
    report(
        ok,
        "distillation trade-off",
        format!(
            "probe with {p_with:.3} ≥ without {p_without:.3} + 0.02; val mse without {mse_without:.5} ≤ with {mse_with:.5}"
        ),
    );
    assert!(ok);
}

#[test]
fn parallel_decoding_matches_sequential_and_is_causal() {
    let _s = serial();
    let l = loaded();
    let c = cfg();
    let classes: Vec<ClassId> = (0..16).map(|i| ClassId((i * 5) % 64)).collect();
    let spec = sample_spec(&c, 3, 1);
    let par = l.ar.generate(&classes, &spec).unwrap();
    let seq = l.ar.ar.generate_sequential(&l.ar.ema, &l.ar.head, &classes, &spec).unwrap();
    let identical = par == seq;

    let n = c.ar().tokens;
    let latents = l.stage2.normalized_latents(&l.train.images()[..2]).unwrap();
    let orders = vec![(0..n).rev().collect::<Vec<_>>(), (0..n).map(|i| (i * 7) % n).collect()];
    let batch = build_training_sequence(&latents, &orders, &l.train.class_ids()[..2]).unwrap();
    let mut leaks = 0usize;
    let mut past_signal = true;
    for t in [0, 1, n / 2, n - 1] {
        let mut g = Graph::new();
        let z = g.input(batch.latents.clone());
        let h = l.ar.ar.ar_forward_with(&mut g, &l.ar.store, &batch, z, false).unwrap();
        let hq = g.select_rows(h, &[batch.query_slot(1, t)]).unwrap();
        let loss = g.sum(hq).unwrap();
        let grads = g.backward(loss).unwrap();
        let dz = grads.wrt(z).unwrap();
        for r in 0..2 * n {
            let future = r < n || r >= n + t;
            let nonzero = dz.row(r).iter().any(|&v| v != 0.0);
            leaks += (future && nonzero) as usize;
        }
        if t > 0 {
            past_signal &= dz.row(n).iter().any(|&v| v != 0.0);
        }
    }
    let ok = identical && leaks == 0 && past_signal;
    report(
        ok,
        "query decoding",
        format!("group size 1 bit-identical to sequential over 16 images: {identical}; future-token gradient entries: {leaks}"),
    );
    assert!(ok);
}

#[test]
fn group_parallel_sampling_keeps_accuracy() {
    let _s = serial();
    let l = loaded();
    let c = cfg();
    let classes = cli::all_classes(256);
    let mut acc = Vec::new();
    let mut passes = Vec::new();
    for m in [1, 4] {
        l.ar.ar.reset_passes();
        let z = l.ar.generate(&classes, &sample_spec(&c, 1, m)).unwrap();
        passes.push(l.ar.ar.forward_passes());
        let images = l.stage2.decode_normalized(&z).unwrap();
        let samples: Vec<(ClassId, Image)> = classes.iter().copied().zip(images).collect();
        acc.push(grade_conditional_samples(&l.teacher.teacher, &l.teacher.store, &samples).unwrap().overall);
    }
    let ok = acc[1] >= 0.85 * acc[0] && passes[0] == 4 * passes[1];
    report(
        ok,
        "group-parallel sampling",
        format!(
            "accuracy m=4 {:.3} ≥ 0.85 × m=1 {:.3}; backbone passes {} vs {} (exactly 4×)",
            acc[1], acc[0], passes[1], passes[0]
        ),
    );
    assert!(ok);
}

#[test]
fn tokenizer_reconstructs_competently() {
    let _s = serial();
    let l = loaded();
    let vi = l.val.images();
    let recon = l.stage1.reconstruct(&vi).unwrap();
    let rr: Vec<&Image> = recon.iter().collect();
    let mean = mean_image(&l.train.images()).unwrap();
    let n = vi.len() as f64;
    let p_model = vi.iter().zip(&recon).map(|(x, y)| psnr(x, y).unwrap()).sum::<f64>() / n;
    let p_base = vi.iter().map(|x| psnr(x, &mean).unwrap()).sum::<f64>() / n;
    let noise = cli::noise_images(vi.len(), vi[0].height(), 0).unwrap();
    let nr: Vec<&Image> = noise.iter().collect();
    let (t, ts) = (&l.teacher.teacher, &l.teacher.store);
    let fd_model = feature_distance(&vi, &rr, t, ts).unwrap();
    let fd_noise = feature_distance(&vi, &nr, t, ts).unwrap();
    let c = cfg();
    let ok = c.ae_steps == 2000 && c.train_size == 512 && p_model >= p_base + 5.0 && fd_model < 0.25 * fd_noise;
    report(
        ok,
        "reconstruction",
        format!(
            "stage 1 ({} steps, {} images): val psnr {p_model:.2} ≥ mean-image {p_base:.2} + 5 dB; feature distance {fd_model:.3} < 0.25 × noise {fd_noise:.3}",
            c.ae_steps, c.train_size
        ),
    );
    assert!(ok);
}

#[test]
fn noise_sweep_trends() {
    let _s = serial();
    let l = loaded();
    let mut c = cfg();
    c.ar_steps = 2000;
    c.stage2_steps = 500;
    let feats = l.teacher.token_features(&l.train).unwrap();
    let inputs =
        SweepInputs { cfg: &c, train: &l.train, val: &l.val, teacher: &l.teacher, feats: &feats, stage1: &l.stage1 };
    let rows = sweep_noise(&inputs, &SWEEP_SIGMAS, &SWEEP_SEEDS, 256).unwrap();
    let mut monotone = true;
    let mut best_positive = 0;
    let mut best = Vec::new();
    for &seed in &SWEEP_SEEDS {
        let r: Vec<_> = rows.iter().filter(|r| r.seed == seed).collect();
        monotone &= r.windows(2).all(|w| w[1].psnr <= w[0].psnr + 0.3);
        let top = r.iter().max_by(|a, b| a.cond_accuracy.total_cmp(&b.cond_accuracy).then(b.sigma.total_cmp(&a.sigma))).unwrap();
        best.push(top.sigma);
        best_positive += (top.sigma > 0.0) as usize;
    }
    let _ = std::io::stdout().write_all(cli::sweep_csv(&rows).as_bytes());
    let ok = monotone && best_positive >= 2;
    report(
        ok,
        "noise sweep",
        format!("psnr non-increasing in σ within 0.3 dB: {monotone}; accuracy-maximizing σ per seed {best:?} ({best_positive} of 3 > 0)"),
    );
    assert!(ok);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic_and_within_budget() {
    let _s = serial();
    let first = pipeline();
    let second = tempfile::tempdir().unwrap();
    let elapsed2 = run_pipeline(second.path());
    let (a, b) = (tree(&first.path), tree(second.path()));
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let kinds = |ext: &str| a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == ext)).count();
    let same = a.len() == b.len() && differing.is_empty();
    let ok = same && kinds("ckpt") == 5 && kinds("ppm") > 0 && kinds("csv") > 0 && first.elapsed < PIPELINE_BUDGET;
    report(
        ok,
        "determinism",
        format!(
            "{} files ({} checkpoints, {} images, {} csv) byte-identical across runs: {same}; pipeline wall time {:.1} min / {:.1} min < 30 min",
            a.len(),
            kinds("ckpt"),
            kinds("ppm"),
            kinds("csv"),
            first.elapsed.as_secs_f64() / 60.0,
            elapsed2.as_secs_f64() / 60.0
        ),
    );
    assert!(ok, "differing: {differing:?}");
}
