//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus one binary payload
//! `samples.bin`. Per sample, in order, little-endian: rgb f32 (3*R*R),
//! thermal f32 (R*R), landmarks f32 (K*2, x then y), visibility u8 (K),
//! bbox f32 (4: x, y, w, h), eye indices u32 (2: left, right). The manifest
//! records the per-sample byte offsets and an FNV-1a checksum over the whole
//! payload; `load` verifies both and fails closed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::hash::Fnv1a;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    split: String,
    n: usize,
    resolution: usize,
    k: usize,
    k_split: usize,
    checksum: String,
    offsets: Vec<u64>,
}

fn sample_to_bytes(s: &Sample, out: &mut Vec<u8>) {
    for &v in s.rgb.iter().chain(s.thermal.iter()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for p in &s.landmarks {
        out.extend_from_slice(&(p[0] as f32).to_le_bytes());
        out.extend_from_slice(&(p[1] as f32).to_le_bytes());
    }
    out.extend_from_slice(&s.visibility);
    for &v in &s.bbox {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(s.eye_left as u32).to_le_bytes());
    out.extend_from_slice(&(s.eye_right as u32).to_le_bytes());
}

fn payload(ds: &Dataset) -> (Vec<u8>, Vec<u64>) {
    let mut bytes = Vec::new();
    let mut offsets = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        offsets.push(bytes.len() as u64);
        sample_to_bytes(s, &mut bytes);
    }
    (bytes, offsets)
}

pub(super) fn payload_checksum(ds: &Dataset) -> u64 {
    let (bytes, _) = payload(ds);
    let mut h = Fnv1a::new();
    h.update(&bytes);
    h.finish()
}

impl Dataset {
    /// Write `manifest.json` + `samples.bin` into `dir` (created if absent).
    /// Files are written to temporaries and renamed into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (bytes, offsets) = payload(self);
        let mut h = Fnv1a::new();
        h.update(&bytes);
        let manifest = Manifest {
            version: self.version,
            seed: self.seed,
            split: self.split.clone(),
            n: self.samples.len(),
            resolution: self.resolution,
            k: self.keypoints,
            k_split: self.k_split,
            checksum: format!("{:016x}", h.finish()),
            offsets,
        };
        write_atomic(&dir.join("samples.bin"), &bytes)?;
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(())
    }

    /// Read a dataset back, verifying version and checksum.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format version {} (expected {FORMAT_VERSION})",
                manifest.version
            )));
        }
        let bytes = fs::read(dir.join("samples.bin"))?;
        let mut h = Fnv1a::new();
        h.update(&bytes);
        let checksum = format!("{:016x}", h.finish());
        if checksum != manifest.checksum {
            return Err(Error::Corruption(format!(
                "samples.bin checksum {checksum} != manifest {}",
                manifest.checksum
            )));
        }
        if manifest.offsets.len() != manifest.n {
            return Err(Error::Format("offset table length != n".into()));
        }
        let r = manifest.resolution;
        let k = manifest.k;
        let sample_len = (3 * r * r + r * r + 2 * k + 4) * 4 + k + 8;
        let mut samples = Vec::with_capacity(manifest.n);
        for (i, &off) in manifest.offsets.iter().enumerate() {
            let start = off as usize;
            let end = start + sample_len;
            if end > bytes.len() || start != i * sample_len {
                return Err(Error::Format(format!("bad offset {off} for sample {i}")));
            }
            samples.push(sample_from_bytes(&bytes[start..end], r, k)?);
        }
        Ok(Dataset {
            version: manifest.version,
            seed: manifest.seed,
            split: manifest.split,
            resolution: r,
            keypoints: k,
            k_split: manifest.k_split,
            samples,
        })
    }
}

fn sample_from_bytes(b: &[u8], r: usize, k: usize) -> Result<Sample> {
    let mut pos = 0usize;
    let mut f32_at = |b: &[u8]| -> f64 {
        let v = f32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as f64;
        pos += 4;
        v
    };
    let rgb: Vec<f64> = (0..3 * r * r).map(|_| f32_at(b)).collect();
    let thermal: Vec<f64> = (0..r * r).map(|_| f32_at(b)).collect();
    let landmarks: Vec<[f64; 2]> = (0..k).map(|_| [f32_at(b), f32_at(b)]).collect();
    let visibility = b[pos..pos + k].to_vec();
    pos += k;
    let mut rest = |b: &[u8]| -> f64 {
        let v = f32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as f64;
        pos += 4;
        v
    };
    let bbox = [rest(b), rest(b), rest(b), rest(b)];
    let eye_left = u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as usize;
    pos += 4;
    let eye_right = u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as usize;
    pos += 4;
    if pos != b.len() {
        return Err(Error::Format("trailing bytes in sample record".into()));
    }
    if visibility.iter().any(|&v| v > 1) {
        return Err(Error::Format("visibility flag outside {0,1}".into()));
    }
    Ok(Sample { rgb, thermal, landmarks, visibility, bbox, eye_left, eye_right })
}

/// Write via a temp file + rename so readers never observe partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
