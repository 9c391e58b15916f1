//! Checkpoint binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DIKD"
//! version u32
//! config  u64 length + JSON (StageConfig snapshot)
//! meta    u64 length + JSON (backbone config, head spec, modality, frozen,
//!                            adapter channel counts, best epoch/NME, log ref)
//! params  model ParamSet, then optional channel-adapter and
//!         injection-adapter ParamSets as flagged in meta
//! check   u64 FNV-1a over everything above
//! ```
//!
//! Parameter values are raw f64 little-endian, so a load/save round trip is
//! bit-exact. Loads verify magic, version, bounds and checksum, and fail
//! closed on truncation or mutation. Writes go through a temp file + rename.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::write_atomic;
use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::losses::{ChannelAdapter, InjectionAdapter};
use crate::nn::{BackboneConfig, HeadSpec, Modality, Model, ParamSet, ParamTensor};
use crate::pipeline::StageConfig;

pub const MAGIC: &[u8; 4] = b"DIKD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config: StageConfig,
    pub model: Model,
    pub chan_adapter: Option<ChannelAdapter>,
    pub inj_adapter: Option<InjectionAdapter>,
    /// Path of the training-log CSV this checkpoint belongs to, if any.
    pub log_ref: String,
    /// Digest of the run configuration that produced this checkpoint.
    pub config_digest: String,
    pub best_val_nme: f64,
    pub best_epoch: u32,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    backbone: BackboneConfig,
    head: HeadSpec,
    modality: Modality,
    frozen: bool,
    chan_adapter: Option<(usize, usize)>,
    inj_adapter: Option<(usize, usize)>, // (teacher_ch, student_ch)
    log_ref: String,
    config_digest: String,
    best_val_nme: f64,
    best_epoch: u32,
}

fn push_params(set: &ParamSet, out: &mut Vec<u8>) {
    out.extend_from_slice(&(set.params.len() as u32).to_le_bytes());
    for p in &set.params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
        for &v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(p.trainable));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_params(r: &mut Reader) -> Result<ParamSet> {
    let count = r.u32()? as usize;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("bad parameter name".into()))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = r.u64()? as usize;
        if n != shape.iter().product::<usize>() {
            return Err(Error::Format(format!("parameter '{name}' length/shape mismatch")));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        let trainable = r.u8()? != 0;
        set.params.push(ParamTensor { name, shape, values, trainable });
    }
    Ok(set)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let config = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        let meta = Meta {
            backbone: self.model.backbone.clone(),
            head: self.model.head,
            modality: self.model.modality,
            frozen: self.model.frozen,
            chan_adapter: self.chan_adapter.as_ref().map(|a| (a.in_channels, a.out_channels)),
            inj_adapter: self
                .inj_adapter
                .as_ref()
                .map(|a| (a.teacher_to_student.in_channels, a.teacher_to_student.out_channels)),
            log_ref: self.log_ref.clone(),
            config_digest: self.config_digest.clone(),
            best_val_nme: self.best_val_nme,
            best_epoch: self.best_epoch,
        };
        let meta = serde_json::to_vec(&meta)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        push_params(&self.model.params, &mut out);
        if let Some(a) = &self.chan_adapter {
            push_params(&a.params, &mut out);
        }
        if let Some(a) = &self.inj_adapter {
            push_params(&a.teacher_to_student.params, &mut out);
            push_params(&a.student_to_teacher.params, &mut out);
        }
        let mut h = Fnv1a::new();
        h.update(&out);
        out.extend_from_slice(&h.finish().to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 16 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv1a::new();
        h.update(body);
        if h.finish() != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Corruption("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config_len = r.u64()? as usize;
        let config: StageConfig = serde_json::from_slice(r.take(config_len)?)?;
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        let params = read_params(&mut r)?;
        let model = Model {
            backbone: meta.backbone,
            head: meta.head,
            modality: meta.modality,
            frozen: meta.frozen,
            params,
        };
        let chan_adapter = match meta.chan_adapter {
            Some((in_ch, out_ch)) => Some(ChannelAdapter {
                in_channels: in_ch,
                out_channels: out_ch,
                params: read_params(&mut r)?,
            }),
            None => None,
        };
        let inj_adapter = match meta.inj_adapter {
            Some((teacher_ch, student_ch)) => {
                let t2s = ChannelAdapter {
                    in_channels: teacher_ch,
                    out_channels: student_ch,
                    params: read_params(&mut r)?,
                };
                let s2t = ChannelAdapter {
                    in_channels: student_ch,
                    out_channels: teacher_ch,
                    params: read_params(&mut r)?,
                };
                Some(InjectionAdapter { teacher_to_student: t2s, student_to_teacher: s2t })
            }
            None => None,
        };
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint {
            version,
            config,
            model,
            chan_adapter,
            inj_adapter,
            log_ref: meta.log_ref,
            config_digest: meta.config_digest,
            best_val_nme: meta.best_val_nme,
            best_epoch: meta.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Variant};
    use crate::pipeline::{StageConfig, StageKind};

    fn sample_checkpoint() -> Checkpoint {
        let model = init_model(
            BackboneConfig::new(Variant::T, Modality::Thermal),
            HeadSpec::default(),
            9,
        )
        .unwrap();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: StageConfig::new(StageKind::SupervisedThermal, Variant::T, 9),
            model,
            chan_adapter: Some(ChannelAdapter::new("chan", 8, 16, 1)),
            inj_adapter: Some(InjectionAdapter::new(16, 8, 2)),
            log_ref: "logs/train.csv".into(),
            config_digest: "abc123".into(),
            best_val_nme: 0.123,
            best_epoch: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params, ck.model.params);
        assert_eq!(back.log_ref, ck.log_ref);
        assert_eq!(back.best_val_nme, ck.best_val_nme);
        assert_eq!(
            back.chan_adapter.as_ref().unwrap().params,
            ck.chan_adapter.as_ref().unwrap().params
        );
        assert_eq!(bytes, back.to_bytes().unwrap());
    }

    #[test]
    fn truncation_fails_closed() {
        let bytes = sample_checkpoint().to_bytes().unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic_and_flipped_byte_fail() {
        let mut bytes = sample_checkpoint().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn save_load_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }
}
