//! Binary parameter checkpoints.
//!
//! Layout (little-endian): `"VGTK"`, `u32` version, `u32` record count, then
//! per record `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims and
//! the `f32` payload; finally a `u64` FNV-1a hash of every preceding byte.
//! Records are written in name order, so equal stores give equal bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"VGTK";
pub const VERSION: u32 = 1;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let h = fnv1a(&out);
    out.extend_from_slice(&h.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "missing VGTK header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::format("checkpoint", "checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format("checkpoint", format!("{name}: shape overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "payload overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if store.contains(&name) {
            return Err(Error::format("checkpoint", format!("duplicate record {name}")));
        }
        store.insert(name, Tensor::new(&shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::format("checkpoint", "trailing bytes after records"));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read(path)?)
}

/// Checks that `store` has exactly the names and shapes of `like`.
pub fn check_layout(store: &ParamStore, like: &ParamStore) -> Result<()> {
    for (name, t) in like.iter() {
        let got = store.get(name).map_err(|_| Error::format("checkpoint", format!("missing tensor {name}")))?;
        if got.shape() != t.shape() {
            return Err(Error::Shape(format!("{name}: checkpoint {:?}, model {:?}", got.shape(), t.shape())));
        }
    }
    if let Some(extra) = store.names().find(|n| !like.contains(n)) {
        return Err(Error::format("checkpoint", format!("unexpected tensor {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample_store() -> ParamStore {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        s.insert("b.w", Tensor::randn(&[3, 5], 1.0, &mut r));
        s.insert("a", Tensor::randn(&[7], 1.0, &mut r));
        s.insert("c.scalar", Tensor::scalar(-0.0));
        s.insert("d.nan", Tensor::new(&[2], vec![f32::NAN, f32::INFINITY]).unwrap());
        s
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let bytes = encode_checkpoint(&s);
        let back = decode_checkpoint(&bytes).unwrap();
        for (name, t) in s.iter() {
            let u = back.get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t), bits(u));
        }
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let mut s = ParamStore::new();
        s.insert("xy", Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = encode_checkpoint(&s);
        let mut want = b"VGTK".to_vec();
        for v in [1u32, 1, 2] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(b"xy");
        for v in [2u32, 1, 2] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(&b[..b.len() - 8], &want[..]);
        assert_eq!(&b[b.len() - 8..], &fnv1a(&want).to_le_bytes());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&sample_store());
        for pos in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(decode_checkpoint(&bad).is_err(), "flip at {pos}");
        }
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(b"VGTK").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("absent.vgtk");
        match load_checkpoint(&p) {
            Err(Error::MissingArtifact(q)) => assert_eq!(q, p),
            other => panic!("{other:?}"),
        }
        save_checkpoint(&sample_store(), dir.path().join("x.vgtk")).unwrap();
        assert_eq!(load_checkpoint(dir.path().join("x.vgtk")).unwrap().len(), 4);
    }

    #[test]
    fn layout_check() {
        let s = sample_store();
        assert!(check_layout(&s, &s).is_ok());
        let mut t = s.clone();
        t.insert("a", Tensor::zeros(&[8]));
        assert!(check_layout(&t, &s).is_err());
        let mut u = s.clone();
        u.insert("zz", Tensor::zeros(&[1]));
        assert!(check_layout(&u, &s).is_err());
    }
}
