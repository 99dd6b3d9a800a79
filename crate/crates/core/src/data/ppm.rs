use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const MAX_PIXELS: usize = 1 << 26;

/// Binary P6 encoding with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::format("ppm", format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let width = parse_dim(next_token(bytes, &mut pos)?)?;
    let height = parse_dim(next_token(bytes, &mut pos)?)?;
    let maxval = parse_dim(next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("ppm", format!("unsupported maxval {maxval}")));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|&p| p <= MAX_PIXELS)
        .ok_or_else(|| Error::format("ppm", format!("dimensions {width}x{height} overflow")))?;
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("ppm", "missing raster separator"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != pixels * 3 {
        return Err(Error::format("ppm", format!("expected {} raster bytes, got {}", pixels * 3, raster.len())));
    }
    let maxval = maxval as f32;
    Image::from_data(height, width, raster.iter().map(|&b| b as f32 / maxval).collect())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("ppm", "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_dim(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::format("ppm", format!("bad header field {:?}", String::from_utf8_lossy(tok))))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn extreme_images_round_trip_exactly() {
        for v in [0.0, 1.0] {
            let img = Image::filled(5, 7, v);
            assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }
    }

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_ppm(b"P3\n1 1\n255\n   ").is_err());
        assert!(decode_ppm(b"P6\n1 x\n255\n   ").is_err());
        assert!(decode_ppm(b"P6\n1 1\n255\n  ").is_err());
        assert!(decode_ppm(b"P6\n1 1\n").is_err());
        assert!(decode_ppm(b"P6\n1 1\n70000\n   ").is_err());
    }

    #[test]
    fn dimension_overflow() {
        let header = format!("P6\n{} {}\n255\n", usize::MAX, 3);
        assert!(matches!(decode_ppm(header.as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = Image::from_data(1, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        write_ppm(&img, &path).unwrap();
        assert!(read_ppm(&path).unwrap().data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
    }

    proptest! {
        #[test]
        fn quantization_error_is_bounded(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_data(h, w, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap();
            let back = decode_ppm(&encode_ppm(&img)).unwrap();
            let err = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            prop_assert!(err <= 1.0 / 255.0);
        }
    }
}
