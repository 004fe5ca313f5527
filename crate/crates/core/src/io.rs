//! File formats: the `FQT1` tensor file, CIFAR-10 binary batches, and
//! JSON checkpoints. Every write goes to a temporary sibling first and is
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const TENSOR_MAGIC: &[u8; 4] = b"FQT1";
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Header, then `f32` little-endian values in `(h, w, c)` order. Values
/// are rounded to `f32`.
pub fn encode_tensor(t: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.values().len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [t.height(), t.width(), t.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("missing FQT1 header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    if bytes.len() - 16 != 4 * n {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match {h}x{w}x{c}",
            bytes.len() - 16
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor3::new(h, w, c, values)
}

pub fn write_tensor(path: &Path, t: &Tensor3) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    decode_tensor(&read(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Tensor3,
    pub label: u8,
}

/// Label byte, then 1024 bytes each of the R, G and B planes; pixels map
/// to `v / 127.5 - 1`.
pub fn decode_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let mut image = Tensor3::zeros(32, 32, 3);
            for c in 0..3 {
                for p in 0..1024 {
                    let v = rec[1 + c * 1024 + p] as f64 / 127.5 - 1.0;
                    image.set(p / 32, p % 32, c, v);
                }
            }
            LabeledImage { image, label: rec[0] }
        })
        .collect())
}

pub fn load_cifar10_binary(path: &Path) -> Result<Vec<LabeledImage>> {
    decode_cifar10(&read(path)?)
}

/// Inverse of [`decode_cifar10`] for values on the byte grid.
pub fn encode_cifar10(records: &[(u8, [[u8; 1024]; 3])]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD);
    for (label, planes) in records {
        out.push(*label);
        for p in planes {
            out.extend_from_slice(p);
        }
    }
    out
}

/// A CIFAR-format stand-in for offline use: `n` records alternating
/// labels 0 and 1. Class 0 has a bright, blue-leaning upper half, class 1
/// a warm, bright lower half; both carry heavy pixel noise, a random
/// global brightness shift and a random blob in the opposite class's
/// colour.
pub fn cifar_surrogate(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<(u8, [[u8; 1024]; 3])> = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let shift: f64 = rng.gen_range(-40.0..40.0);
            let (by, bx) = (rng.gen_range(0..24), rng.gen_range(0..24));
            let mut planes = [[0u8; 1024]; 3];
            for p in 0..1024 {
                let (y, x) = (p / 32, p % 32);
                let top = y < 16;
                let lit = if label == 0 { top } else { !top };
                let blob = (by..by + 8).contains(&y) && (bx..bx + 8).contains(&x);
                let tint: [f64; 3] = match (lit, label, blob) {
                    (_, 0, true) => [150.0, 110.0, 80.0],
                    (_, 1, true) => [80.0, 110.0, 150.0],
                    (true, 0, _) => [120.0, 150.0, 190.0],
                    (true, 1, _) => [190.0, 140.0, 100.0],
                    _ => [90.0, 90.0, 90.0],
                };
                for c in 0..3 {
                    let v = tint[c] + shift + rng.gen_range(-60.0..60.0);
                    planes[c][p] = v.clamp(0.0, 255.0) as u8;
                }
            }
            (label, planes)
        })
        .collect();
    encode_cifar10(&records)
}

/// Versioned JSON wrapper around any serialisable parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn new(kind: impl Into<String>, seed: u64, step: u64, payload: T) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            seed,
            step,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_bytes(bytes: &[u8], kind: &str) -> Result<Self> {
        let ck: Self = serde_json::from_slice(bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.kind != kind {
            return Err(Error::Format(format!("expected a `{kind}` checkpoint, found `{}`", ck.kind)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        Self::from_bytes(&read(path)?, kind)
    }
}
