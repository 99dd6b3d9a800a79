//! Teacher, then both tokenizer stages at reduced length, then reconstruction
//! metrics on held-out images against the mean-image baseline.

use vgt::data::{gen_shapes, psnr, write_ppm, Image, Split};
use vgt::eval::{mean_image, reconstruction_report};
use vgt::train::{train_ae_stage1, train_ae_stage2, train_teacher, TrainConfig};

fn main() -> vgt::Result<()> {
    let mut cfg = TrainConfig::quick();
    for (k, v) in [("teacher_steps", "400"), ("ae_steps", "400"), ("stage2_steps", "200"), ("log_every", "100")] {
        cfg.set(k, v)?;
    }
    let train = gen_shapes(cfg.train_size, cfg.seed, Split::Train)?;
    let val = gen_shapes(cfg.val_size, cfg.seed, Split::Val)?;

    let teacher = train_teacher(&cfg, &train, &val)?;
    println!("teacher val accuracy {:.3}", teacher.val_accuracy);
    let feats = teacher.model.token_features(&train)?;
    let stage1 = train_ae_stage1(&cfg, &train, &teacher.model, &feats)?;
    print!("{}", stage1.log.to_csv());
    let stage2 = train_ae_stage2(&cfg, &train, &stage1.model, &teacher.model, &feats)?;
    let stats = stage2.model.stats()?;
    println!("frozen latent mean {:?}", stats.mean);
    println!("frozen latent std  {:?}", stats.std);

    let vi = val.images();
    let recon = stage2.model.reconstruct(&vi)?;
    let rr: Vec<&Image> = recon.iter().collect();
    let r = reconstruction_report(&vi, &rr, &teacher.model.teacher, &teacher.model.store)?;
    let mean = mean_image(&train.images())?;
    let base = vi.iter().map(|x| psnr(x, &mean)).sum::<vgt::Result<f64>>()? / vi.len() as f64;
    println!("val psnr {:.2} dB (mean-image baseline {base:.2} dB), ssim {:.3}, feature distance {:.4}", r.psnr, r.ssim, r.frechet);

    let dir = std::env::temp_dir().join("vgt-tokenizer-example");
    std::fs::create_dir_all(&dir)?;
    for i in 0..4 {
        write_ppm(vi[i], dir.join(format!("{i}_original.ppm")))?;
        write_ppm(&recon[i], dir.join(format!("{i}_recon.ppm")))?;
    }
    println!("images in {}", dir.display());
    Ok(())
}
