//! Binary checkpoint files.
//!
//! Layout (little-endian): magic `SHHT`, `u32` format version, length-prefixed
//! architecture JSON, length-prefixed metadata JSON, `u32` tensor count, then
//! per tensor a `u16`-prefixed UTF-8 name, `u8` rank, `u32` dims and raw `f32`
//! data. A trailing FNV-1a 64 checksum covers everything before it.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use serde::{Deserialize, Serialize};

use super::{Adam, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::net::{ArchitectureSpec, Model};

pub const MAGIC: &[u8; 4] = b"SHHT";
pub const FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Training progress stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub best_val_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Epochs since the last validation improvement.
    pub plateau_wait: usize,
    pub stale_epochs: usize,
    /// Every per-epoch and per-sample generator derives from this seed and the epoch index.
    pub seed: u64,
    pub adam_step: u64,
    pub history: Vec<EpochRecord>,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ArchitectureSpec,
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshot of weights, batch-norm statistics and optionally optimizer moments.
    pub fn capture(model: &Model<f32>, adam: Option<&Adam>, meta: CheckpointMeta) -> Self {
        let mut tensors = Vec::new();
        let params = model.params();
        for (name, p) in &params {
            tensors.push(NamedTensor {
                name: name.clone(),
                shape: p.shape().to_vec(),
                data: p.value.clone(),
            });
        }
        for (name, b) in model.buffers() {
            tensors.push(NamedTensor {
                name,
                shape: vec![b.len()],
                data: b.clone(),
            });
        }
        if let Some(adam) = adam {
            for (prefix, moments) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
                for ((name, p), data) in params.iter().zip(moments) {
                    tensors.push(NamedTensor {
                        name: format!("{prefix}{name}"),
                        shape: p.shape().to_vec(),
                        data: data.clone(),
                    });
                }
            }
        }
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: model.spec().clone(),
            meta: CheckpointMeta {
                adam_step: adam.map_or(0, |a| a.step),
                ..meta
            },
            tensors,
        }
    }

    fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model; every parameter and statistic must be present with the right size.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = Model::skeleton(&self.architecture)?;
        for (name, p) in model.params_mut() {
            let t = self
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape,
                    p.shape()
                )));
            }
            p.value.clone_from(&t.data);
        }
        for (name, b) in model.buffers_mut() {
            let t = self
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.data.len() != b.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong length")));
            }
            b.clone_from(&t.data);
        }
        Ok(model)
    }

    /// Optimizer state, if the checkpoint carries moments for every parameter.
    pub fn adam(&self, model: &Model<f32>) -> Result<Option<Adam>> {
        if self.tensors.iter().all(|t| !t.name.starts_with(ADAM_M)) {
            return Ok(None);
        }
        let mut adam = Adam::new(model);
        adam.step = self.meta.adam_step;
        for (i, (name, p)) in model.params().iter().enumerate() {
            for (prefix, dst) in [(ADAM_M, &mut adam.m[i]), (ADAM_V, &mut adam.v[i])] {
                let t = self
                    .find(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for `{name}`")))?;
                if t.data.len() != p.len() {
                    return Err(Error::Checkpoint(format!("optimizer moment for `{name}` has the wrong length")));
                }
                dst.clone_from(&t.data);
            }
        }
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LE>(self.format_version).unwrap();
        for json in [serde_json::to_vec(&self.architecture)?, serde_json::to_vec(&self.meta)?] {
            buf.write_u32::<LE>(json.len() as u32).unwrap();
            buf.extend_from_slice(&json);
        }
        buf.write_u32::<LE>(self.tensors.len() as u32).unwrap();
        for t in &self.tensors {
            buf.write_u16::<LE>(t.name.len() as u16).unwrap();
            buf.extend_from_slice(t.name.as_bytes());
            buf.write_u8(t.shape.len() as u8).unwrap();
            for &d in &t.shape {
                buf.write_u32::<LE>(d as u32).unwrap();
            }
            buf.reserve(t.data.len() * 4);
            for &v in &t.data {
                buf.write_f32::<LE>(v).unwrap();
            }
        }
        let sum = fnv1a(&buf);
        buf.write_u64::<LE>(sum).unwrap();
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        if bytes.len() < 16 {
            return Err(corrupt("truncated"));
        }
        let mut r = &bytes[4..];
        let version = r.read_u32::<LE>().map_err(|_| corrupt("truncated"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not the supported {FORMAT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = (&tail[..]).read_u64::<LE>().unwrap();
        if fnv1a(body) != stored {
            return Err(corrupt("checksum mismatch (truncated or damaged)"));
        }
        let mut r = &body[8..];
        let json = |r: &mut &[u8]| -> Result<Vec<u8>> {
            let n = r.read_u32::<LE>().map_err(|_| corrupt("truncated header"))? as usize;
            let mut v = vec![0; n];
            r.read_exact(&mut v).map_err(|_| corrupt("truncated header"))?;
            Ok(v)
        };
        let architecture: ArchitectureSpec = serde_json::from_slice(&json(&mut r)?)?;
        let meta: CheckpointMeta = serde_json::from_slice(&json(&mut r)?)?;
        let count = r.read_u32::<LE>().map_err(|_| corrupt("truncated table"))?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = r.read_u16::<LE>().map_err(|_| corrupt("truncated table"))? as usize;
            let mut name = vec![0; n];
            r.read_exact(&mut name).map_err(|_| corrupt("truncated table"))?;
            let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let rank = r.read_u8().map_err(|_| corrupt("truncated table"))?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.read_u32::<LE>().map_err(|_| corrupt("truncated table"))? as usize);
            }
            let len: usize = shape.iter().product();
            if r.len() < len * 4 {
                return Err(corrupt("truncated tensor data"));
            }
            let mut data = vec![0f32; len];
            r.read_f32_into::<LE>(&mut data).map_err(|_| corrupt("truncated tensor data"))?;
            tensors.push(NamedTensor { name, shape, data });
        }
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            format_version: version,
            architecture,
            meta,
            tensors,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
