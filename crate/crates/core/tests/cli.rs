use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use vgt::data::{read_manifest, read_ppm};

const SMOKE: [&str; 14] = [
    "--preset",
    "quick",
    "--set",
    "teacher_steps=100",
    "--set",
    "ae_steps=100",
    "--set",
    "stage2_steps=100",
    "--set",
    "ar_steps=100",
    "--set",
    "finetune_steps=20",
    "--set",
    "sample_steps=8",
];

fn vgt(dir: &Path, extra: &[&str], args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgt"))
        .arg("--run-dir")
        .arg(dir)
        .args(extra)
        .args(args)
        .output()
        .expect("spawn vgt")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

fn metric(dir: &Path, file: &str, name: &str) -> f64 {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("{name} missing from {file}"))
        .parse()
        .unwrap()
}

struct Smoke {
    _dir: tempfile::TempDir,
    path: PathBuf,
    elapsed: Duration,
}

/// A short end-to-end run shared by the tests that need trained checkpoints.
fn smoke() -> &'static Smoke {
    static S: OnceLock<Smoke> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let t0 = Instant::now();
        for cmd in [
            &["pretrain-teacher"][..],
            &["train-ae", "--stage", "1"],
            &["train-ae", "--stage", "2"],
            &["train-ar"],
            &["finetune"],
        ] {
            ok(&vgt(&path, &SMOKE, cmd));
        }
        Smoke { _dir: dir, path, elapsed: t0.elapsed() }
    })
}

/// A teacher trained for the full default step count, with its reported
/// validation accuracy.
fn teacher_run() -> &'static (tempfile::TempDir, f64) {
    static T: OnceLock<(tempfile::TempDir, f64)> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let text = ok(&vgt(dir.path(), &["--preset", "quick"], &["pretrain-teacher"]));
        let acc = text
            .split("val accuracy ")
            .nth(1)
            .and_then(|r| r.split_whitespace().next())
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("no accuracy in {text}"));
        (dir, acc)
    })
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&vgt(tmp.path(), &[], &["gen-data", "--n", "24", "--seed", "5", "--split", "val", "--out", out.to_str().unwrap()]));
    }
    let rows = read_manifest(a.join("manifest.tsv")).unwrap();
    assert_eq!(rows.len(), 24);
    for r in &rows {
        let x = fs::read(a.join(&r.filename)).unwrap();
        assert_eq!(x, fs::read(b.join(&r.filename)).unwrap());
        let img = read_ppm(a.join(&r.filename)).unwrap();
        assert_eq!((img.height(), img.width()), (16, 16));
    }
    assert_eq!(fs::read(a.join("manifest.tsv")).unwrap(), fs::read(b.join("manifest.tsv")).unwrap());
}

#[test]
fn gen_data_rejects_empty_request() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vgt(tmp.path(), &[], &["gen-data", "--n", "0", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be"));
}

#[test]
fn missing_checkpoints_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in [&["train-ae", "--stage", "1"][..], &["train-ar"], &["eval", "--task", "recon"]] {
        let out = vgt(tmp.path(), &[], cmd);
        assert_eq!(out.status.code(), Some(2), "{cmd:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(".ckpt"), "{cmd:?}");
    }
    let out = vgt(tmp.path(), &[], &["sample", "--out", tmp.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_code_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(vgt(tmp.path(), &[], &["train-ae", "--stage", "3"]).status.code(), Some(1));
    assert_eq!(vgt(tmp.path(), &["--set", "no_such_key=1"], &["train-ar"]).status.code(), Some(1));
    assert_eq!(vgt(tmp.path(), &["--preset", "huge"], &["train-ar"]).status.code(), Some(1));
}

#[test]
fn grad_check_passes_and_localizes_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = ok(&vgt(tmp.path(), &[], &["grad-check"]));
    assert_eq!(clean.lines().filter(|l| l.ends_with("ok")).count(), 3, "{clean}");
    let out = vgt(tmp.path(), &[], &["grad-check", "--inject-fault", "layer_norm"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("offending op: layer_norm"), "{text}");
}

#[test]
fn smoke_chain_finishes_quickly() {
    let s = smoke();
    assert!(s.elapsed < Duration::from_secs(600), "{:?}", s.elapsed);
    for f in ["teacher.ckpt", "ae_stage1.ckpt", "ae_stage2.ckpt", "ar.ckpt", "ar_finetuned.ckpt", "ar.csv", "train-ar.config"] {
        assert!(s.path.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(s.path.join("ar.csv")).unwrap();
    assert!(log.lines().count() >= 2);
}

#[test]
fn sampling_is_reproducible() {
    let s = smoke();
    let (a, b) = (s.path.join("rep_a"), s.path.join("rep_b"));
    for out in [&a, &b] {
        ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "6", "--group-size", "4", "--seed", "9", "--out", out.to_str().unwrap()]));
    }
    for i in 0..6 {
        let name = format!("{i:05}.ppm");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read(a.join("samples.tsv")).unwrap(), fs::read(b.join("samples.tsv")).unwrap());
}

#[test]
fn single_group_matches_sequential_path() {
    let s = smoke();
    let (a, b) = (s.path.join("par"), s.path.join("seq"));
    let pa = ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "4", "--cond", "17", "--out", a.to_str().unwrap()]));
    ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "4", "--cond", "17", "--sequential", "--out", b.to_str().unwrap()]));
    for i in 0..4 {
        let name = format!("{i:05}.ppm");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    assert!(pa.contains("(64 backbone forward passes)"), "{pa}");
    let all = s.path.join("all");
    let full = ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "2", "--group-size", "64", "--out", all.to_str().unwrap()]));
    assert!(full.contains("(1 backbone forward passes)"), "{full}");
}

#[test]
fn finetuned_sampling_uses_its_own_checkpoint() {
    let s = smoke();
    let (a, b) = (s.path.join("base"), s.path.join("ft"));
    ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "2", "--out", a.to_str().unwrap()]));
    ok(&vgt(&s.path, &SMOKE, &["sample", "--count", "2", "--finetuned", "--out", b.to_str().unwrap()]));
    assert_ne!(fs::read(a.join("00000.ppm")).unwrap(), fs::read(b.join("00000.ppm")).unwrap());
}

#[test]
fn identity_reconstruction_is_perfect() {
    let s = smoke();
    let out = s.path.join("identity");
    fs::create_dir_all(&out).unwrap();
    ok(&vgt(&s.path, &SMOKE, &["eval", "--task", "recon", "--identity", "--out", out.to_str().unwrap()]));
    assert_eq!(metric(&out, "eval_recon.csv", "psnr"), 99.0);
    assert!(metric(&out, "eval_recon.csv", "frechet").abs() < 1e-6);
    assert!((metric(&out, "eval_recon.csv", "ssim") - 1.0).abs() < 1e-9);
}

#[test]
fn generation_report_counts_passes() {
    let s = smoke();
    let out = s.path.join("gen");
    fs::create_dir_all(&out).unwrap();
    ok(&vgt(&s.path, &SMOKE, &["eval", "--task", "generate", "--per-class", "1", "--group-size", "8", "--out", out.to_str().unwrap()]));
    let acc = metric(&out, "eval_generate.csv", "accuracy");
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metric(&out, "eval_generate.csv", "forward_passes"), 8.0);
}

#[test]
fn probe_on_teacher_features_tracks_teacher_accuracy() {
    let (dir, teacher_acc) = teacher_run();
    let (dir, teacher_acc) = (dir.path(), *teacher_acc);
    ok(&vgt(dir, &["--preset", "quick"], &["eval", "--task", "probe", "--features", "teacher"]));
    let probe = metric(dir, "eval_probe.csv", "probe_accuracy");
    assert!((probe - teacher_acc).abs() < 0.1, "probe {probe} vs teacher {teacher_acc}");
}

#[test]
fn teacher_features_cluster_better_than_pixels() {
    let dir = teacher_run().0.path();
    let t = dir.join("t");
    let p = dir.join("p");
    for (src, out) in [("teacher", &t), ("pixels", &p)] {
        ok(&vgt(dir, &["--preset", "quick"], &["eval", "--task", "purity", "--features", src, "--out", out.to_str().unwrap()]));
    }
    let (pt, pp) = (metric(&t, "eval_purity.csv", "purity"), metric(&p, "eval_purity.csv", "purity"));
    assert!(pt > pp, "teacher {pt} vs pixels {pp}");
}

#[test]
fn sweep_table_covers_grid_and_zero_noise_matches_stage_two() {
    let s = smoke();
    let run = s.path.join("sweep_run");
    fs::create_dir_all(&run).unwrap();
    for f in ["teacher.ckpt", "ae_stage1.ckpt"] {
        fs::copy(s.path.join(f), run.join(f)).unwrap();
    }
    let mut zero = SMOKE.to_vec();
    zero.extend(["--set", "sigma_noise=0"]);
    ok(&vgt(&run, &zero, &["train-ae", "--stage", "2"]));
    ok(&vgt(&run, &zero, &["eval", "--task", "recon"]));
    let psnr = metric(&run, "eval_recon.csv", "psnr");

    let out = run.join("sweep");
    ok(&vgt(&run, &SMOKE, &["sweep-noise", "--values", "0,0.4", "--seeds", "0", "--samples", "8", "--out", out.to_str().unwrap()]));
    let table = fs::read_to_string(out.join("sweep_noise.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "seed,sigma,psnr,frechet,cond_accuracy");
    assert_eq!(lines.len(), 3);
    let row0: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row0[1], 0.0);
    assert!((row0[2] - psnr).abs() < 1e-4, "sweep {} vs stage 2 {psnr}", row0[2]);
}
