//! Versioned binary tensor container.
//!
//! Layout, all integers little-endian:
//! magic `VLCK` · version u32 · entry count u32, then per entry:
//! name length u32 · utf-8 name · rank u8 · extents (rank × u64) ·
//! dtype tag u8 · raw row-major payload. Round-trips are bit-exact.

use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use vlora_core::{Dtype, Element, Shape, Tensor};

const MAGIC: &[u8; 4] = b"VLCK";
const VERSION: u32 = 1;

pub fn save<T: Element>(path: &Path, entries: &[(String, Tensor<T>)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(entries.len())?.to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&u32::try_from(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.shape().dims();
        out.push(u8::try_from(dims.len())?);
        for d in dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        let mut buf = [0u8; 8];
        for v in t.to_vec() {
            let slot = &mut buf[..T::DTYPE.size()];
            v.encode_le(slot);
            out.extend_from_slice(slot);
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Shape,
    pub payload: Vec<u8>,
}

impl Entry {
    pub fn decode<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            bail!("tensor {} is {:?}, expected {:?}", self.name, self.dtype, T::DTYPE);
        }
        Ok(self
            .payload
            .chunks_exact(T::DTYPE.size())
            .map(T::decode_le)
            .collect())
    }
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut r = Cursor { bytes: &bytes, at: 0 };

    if r.take(4)? != &MAGIC[..] {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).context("tensor name")?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let shape = Shape::new(&dims).with_context(|| format!("shape of {name}"))?;
        let dtype = Dtype::from_tag(r.u8()?).with_context(|| format!("dtype of {name}"))?;
        let payload = r.take(shape.numel() * dtype.size())?.to_vec();
        entries.push(Entry { name, dtype, shape, payload });
    }
    if r.at != bytes.len() {
        bail!("{} has {} trailing bytes", path.display(), bytes.len() - r.at);
    }
    Ok(entries)
}

/// Restores a saved state into live tensors, matched by name. The file and
/// the parameter list must describe exactly the same set of tensors.
pub fn restore<T: Element>(path: &Path, params: &[(String, Tensor<T>)]) -> Result<()> {
    let entries = load(path)?;
    if entries.len() != params.len() {
        bail!(
            "{} holds {} tensors, model expects {}",
            path.display(),
            entries.len(),
            params.len()
        );
    }
    let by_name: std::collections::BTreeMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for (name, tensor) in params {
        let entry = by_name
            .get(name.as_str())
            .with_context(|| format!("{} lacks tensor {name}", path.display()))?;
        if entry.shape != *tensor.shape() {
            bail!(
                "tensor {name}: file shape {} vs model shape {}",
                entry.shape,
                tensor.shape()
            );
        }
        let data = entry.decode::<T>()?;
        tensor.apply_update(|buf| buf.copy_from_slice(&data));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            bail!("checkpoint truncated at byte {}", self.bytes.len());
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlora_core::Rng;

    fn sample_entries() -> Vec<(String, Tensor<f32>)> {
        let mut rng = Rng::new(9);
        vec![
            ("a.weight".into(), Tensor::randn(Shape::matrix(3, 5), 1.0, &mut rng)),
            ("b.gain".into(), Tensor::randn(Shape::vector(7), 0.5, &mut rng)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let entries = sample_entries();
        save(&path, &entries).unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for ((name, tensor), entry) in entries.iter().zip(&loaded) {
            assert_eq!(&entry.name, name);
            assert_eq!(&entry.shape, tensor.shape());
            let data: Vec<f32> = entry.decode().unwrap();
            let orig = tensor.to_vec();
            assert_eq!(
                data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                orig.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        // Saving the reloaded tensors again produces identical bytes.
        let path2 = dir.path().join("y.ckpt");
        let reloaded: Vec<(String, Tensor<f32>)> = loaded
            .iter()
            .map(|e| {
                let t = Tensor::from_vec(e.shape.clone(), e.decode().unwrap()).unwrap();
                (e.name.clone(), t)
            })
            .collect();
        save(&path2, &reloaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn restore_fills_live_tensors_and_checks_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let entries = sample_entries();
        save(&path, &entries).unwrap();

        let blank: Vec<(String, Tensor<f32>)> = entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().clone())))
            .collect();
        restore(&path, &blank).unwrap();
        for ((_, orig), (_, back)) in entries.iter().zip(&blank) {
            assert_eq!(orig.to_vec(), back.to_vec());
        }

        let renamed = vec![(String::from("missing"), Tensor::<f32>::zeros(Shape::matrix(3, 5)))];
        assert!(restore(&path, &renamed).is_err());
    }

    #[test]
    fn wrong_dtype_and_garbage_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save(&path, &sample_entries()).unwrap();
        let entries = load(&path).unwrap();
        assert!(entries[0].decode::<f64>().is_err());

        let garbage = dir.path().join("junk.ckpt");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        assert!(load(&garbage).is_err());
    }
}
