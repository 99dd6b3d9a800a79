//! Renders a few synthetic shapes, writes them as PPM files with a manifest
//! and reads one back.

use vgt::data::{gen_shapes, psnr, read_manifest, read_ppm, ssim, write_dataset, Split};

fn main() -> vgt::Result<()> {
    let ds = gen_shapes(8, 0, Split::Train)?;
    let dir = std::env::temp_dir().join("vgt-shapes-example");
    let rows = write_dataset(&ds, &dir)?;
    for r in read_manifest(dir.join("manifest.tsv"))? {
        println!("{:>2}  {:?} {:?} {:?}  {}", r.index, r.shape, r.color, r.position, r.filename);
    }

    let back = read_ppm(dir.join(&rows[0].filename))?;
    let (a, b) = (&ds.samples[0].image, &ds.samples[1].image);
    println!("round trip psnr {:.1} dB (capped)", psnr(a, &back)?);
    println!("two different shapes: psnr {:.2} dB, ssim {:.3}", psnr(a, b)?, ssim(a, b)?);
    println!("files in {}", dir.display());
    Ok(())
}
