use std::fs;
use std::path::Path;

use super::{write_ppm, ColorClass, Dataset, PositionBin, ShapeClass};
use crate::error::{Error, Result};

/// One line of `index<TAB>shape<TAB>color<TAB>position<TAB>filename`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub index: usize,
    pub shape: ShapeClass,
    pub color: ColorClass,
    pub position: PositionBin,
    pub filename: String,
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.index, r.shape, r.color, r.position, r.filename));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(lineno, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::format("manifest", format!("line {}: expected 5 fields", lineno + 1)));
            }
            Ok(ManifestRow {
                index: f[0]
                    .parse()
                    .map_err(|_| Error::format("manifest", format!("line {}: bad index", lineno + 1)))?,
                shape: f[1].parse()?,
                color: f[2].parse()?,
                position: f[3].parse()?,
                filename: f[4].to_string(),
            })
        })
        .collect()
}

/// Writes `00000.ppm, 00001.ppm, …` plus `manifest.tsv` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let filename = format!("{i:05}.ppm");
        write_ppm(&s.image, dir.join(&filename))?;
        rows.push(ManifestRow { index: i, shape: s.shape, color: s.color, position: s.position, filename });
    }
    write_manifest(&rows, dir.join("manifest.tsv"))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_shapes, read_ppm, Split};

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_shapes(6, 2, Split::Train).unwrap();
        let rows = write_dataset(&ds, dir.path()).unwrap();
        let back = read_manifest(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(rows, back);
        for (row, s) in back.iter().zip(&ds.samples) {
            assert_eq!((row.shape, row.color, row.position), (s.shape, s.color, s.position));
            let img = read_ppm(dir.path().join(&row.filename)).unwrap();
            assert!(img.data().iter().zip(s.image.data()).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0));
        }
    }

    #[test]
    fn rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "0\tcircle\tred\n").unwrap();
        assert!(read_manifest(&p).is_err());
        fs::write(&p, "0\thexagon\tred\ttop_left\ta.ppm\n").unwrap();
        assert!(read_manifest(&p).is_err());
    }
}
