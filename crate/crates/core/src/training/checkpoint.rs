//! Binary checkpoint files.
//!
//! ```text
//! "PNLC" | u32 version | u64 n | n bytes JSON metadata
//! tensors: u32 name_len | name | u32 rank | u64 dims… | f64 values…
//! u32 CRC32 of everything before it
//! ```
//! All integers and floats are little-endian. Parameters come first in store
//! order, then Adam first moments (`adam/m/<name>`), then second moments
//! (`adam/v/<name>`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, TrainingMeta};
use crate::corpus::TagSet;
use crate::encoding::SubtokenVocab;
use crate::error::{Error, Result};
use crate::numerics::adam::AdamConfig;
use crate::numerics::{AdamState, ParamStore, Tensor};
use crate::taggers::ModelConfig;

pub const MAGIC: &[u8; 4] = b"PNLC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    tagset: TagSet,
    vocab: SubtokenVocab,
    adam: AdamConfig,
    adam_step: u64,
    meta: TrainingMeta,
    tensors: usize,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            tagset: self.tagset.clone(),
            vocab: self.vocab.clone(),
            adam: self.adam.config,
            adam_step: self.adam.step,
            meta: self.meta.clone(),
            tensors: self.params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 24 * self.params.total_params() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t);
        }
        for (prefix, store) in [("adam/m/", &self.adam.m), ("adam/v/", &self.adam.v)] {
            for (name, t) in store.iter() {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 8 {
            return Err(Error::ChecksumMismatch);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        if bytes.len() < 12 {
            return Err(Error::ChecksumMismatch);
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Reader { buf: body, pos: 8 };
        let json_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(json_len)?)?;
        let mut params = ParamStore::new();
        for _ in 0..header.tensors {
            let (name, t) = r.tensor()?;
            params.insert(name, t)?;
        }
        let mut moments = [ParamStore::new(), ParamStore::new()];
        for (prefix, store) in ["adam/m/", "adam/v/"].iter().zip(moments.iter_mut()) {
            for expected in params.names() {
                let (name, t) = r.tensor()?;
                if name.strip_prefix(prefix) != Some(expected) {
                    return Err(Error::Format(format!("expected {prefix}{expected}, found {name}")));
                }
                store.insert(expected, t)?;
            }
            params.check_aligned(store)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let [m, v] = moments;
        Ok(Checkpoint {
            model: header.model,
            tagset: header.tagset,
            vocab: header.vocab,
            params,
            adam: AdamState { config: header.adam, step: header.adam_step, m, v },
            meta: header.meta,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.filter(|c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len()));
        let count = count.ok_or_else(|| Error::Format(format!("tensor {name} has an impossible shape")))?;
        let data = self.take(8 * count)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, Tensor::from_vec(&shape, data)?))
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
