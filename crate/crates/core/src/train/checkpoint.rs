//! `DSMC` checkpoint files.
//!
//! Layout, little-endian throughout: magic `DSMC`, `u32` version, `u32`
//! length plus UTF-8 config text, `u32` tensor count, then per tensor a
//! `u32`-prefixed name, `u32` rank, `u32` dims and `f64` data. A CRC32 of
//! every preceding byte closes the file.

use std::fs;
use std::path::Path;

use crate::error::{DsmError, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            dims: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| DsmError::Format(format!("checkpoint lacks tensor `{name}`")))
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name
                    .strip_prefix(prefix)
                    .map(|rest| (rest.to_string(), t.data.clone()))
            })
            .collect()
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| DsmError::InvalidArgument(format!("{what} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, ck.config_text.len(), "config text length")?;
    buf.extend_from_slice(ck.config_text.as_bytes());
    put_u32(&mut buf, ck.tensors.len(), "tensor count")?;
    for t in &ck.tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(DsmError::Shape(format!(
                "tensor `{}` has dims {:?} but {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        put_u32(&mut buf, t.name.len(), "tensor name length")?;
        buf.extend_from_slice(t.name.as_bytes());
        put_u32(&mut buf, t.dims.len(), "tensor rank")?;
        for &d in &t.dims {
            put_u32(&mut buf, d, "tensor dimension")?;
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DsmError::Format("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| DsmError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(DsmError::Format("not a DSMC checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(DsmError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(payload) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(DsmError::Corruption);
    }
    let mut cur = Cursor {
        bytes: payload,
        at: 8,
    };
    let config_text = cur.string("config text")?;
    let count = cur.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = cur.string("tensor name")?;
        let rank = cur.u32()?;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| DsmError::Format(format!("tensor `{name}` is too large")))?;
        let raw = cur.take(len.checked_mul(8).ok_or_else(|| {
            DsmError::Format(format!("tensor `{name}` is too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if cur.at != payload.len() {
        return Err(DsmError::Format("trailing bytes after the last tensor".into()));
    }
    Ok(Checkpoint {
        config_text,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
