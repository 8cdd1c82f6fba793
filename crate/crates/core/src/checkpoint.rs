//! Versioned named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TMCCKPT\0"
//! version  u32      = 1
//! dtype    u8       4 (f32) or 8 (f64)
//! count    u32
//! entry*   name_len u32, name utf-8, rank u32, dims u64 × rank,
//!          values (dtype width) × product(dims)
//! ```

use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TMCCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint stores {stored}-byte values, expected {expected}")]
    Dtype { stored: u8, expected: u8 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("entry name is not valid utf-8")]
    Name,
    #[error("missing entry {0}")]
    Missing(String),
    #[error("entry {name}: stored shape {stored:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint file access failed")]
    Io(#[from] std::io::Error),
}

pub fn encode<'a, T: Scalar>(
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(CheckpointError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let dtype = c.take(1)?[0];
    if dtype as usize != T::BYTES {
        return Err(CheckpointError::Dtype {
            stored: dtype,
            expected: T::BYTES as u8,
        });
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| CheckpointError::Name)?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(
            n.checked_mul(T::BYTES)
                .ok_or(CheckpointError::Truncated(c.pos))?,
        )?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::new(shape, data).expect("length computed from shape");
        entries.push((name, t));
    }
    Ok(entries)
}

pub fn save<'a, T: Scalar>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(entries))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    decode(&std::fs::read(path)?)
}
