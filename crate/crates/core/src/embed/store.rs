//! Binary vector store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   [u8; 4]  = "GRGV"
//! version u32      = 1
//! dim     u32
//! count   u64
//! count × record:
//!     id_len u32
//!     id     [u8; id_len]   UTF-8 chunk id
//!     values [f32; dim]
//! ```

use std::path::Path;

use thiserror::Error;

use super::EmbeddingVector;
use crate::scalar::Scalar;

pub const VECTOR_MAGIC: &[u8; 4] = b"GRGV";
pub const VECTOR_VERSION: u32 = 1;

/// Dimension plus `(id, vector)` records in file order.
pub type VectorRecords<T> = (usize, Vec<(String, EmbeddingVector<T>)>);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

/// Little-endian byte reader that fails instead of reading past the end.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(StoreError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, StoreError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), StoreError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(StoreError::Magic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn encode_vectors<T: Scalar>(out: &mut Vec<u8>, dim: usize, records: &[(&str, &EmbeddingVector<T>)]) {
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (id, v) in records {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v.values() {
            out.extend_from_slice(&x.to_f32_lossy().to_le_bytes());
        }
    }
}

pub(crate) fn decode_vectors<T: Scalar>(
    r: &mut Reader<'_>,
) -> Result<VectorRecords<T>, StoreError> {
    r.magic(VECTOR_MAGIC)?;
    let version = r.u32()?;
    if version != VECTOR_VERSION {
        return Err(StoreError::Version {
            expected: VECTOR_VERSION,
            found: version,
        });
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if dim == 0 {
        return Err(StoreError::Corrupt("dim is zero".into()));
    }
    let mut records = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|e| StoreError::Corrupt(format!("chunk id is not utf-8: {e}")))?
            .to_owned();
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(T::from_f32_lossless(r.f32()?));
        }
        let mut v = EmbeddingVector::new(values)
            .map_err(|e| StoreError::Corrupt(format!("{id}: {e}")))?;
        if (v.norm().as_f64() - 1.0).abs() <= 1e-6 {
            v.mark_normalized();
        }
        records.push((id, v));
    }
    Ok((dim, records))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write through a temporary sibling and rename, so readers never observe a
/// partially written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn write_vectors<T: Scalar>(
    path: &Path,
    dim: usize,
    records: &[(String, EmbeddingVector<T>)],
) -> Result<(), StoreError> {
    if let Some((id, v)) = records.iter().find(|(_, v)| v.dim() != dim) {
        return Err(StoreError::Corrupt(format!("{id} has dim {}, expected {dim}", v.dim())));
    }
    let refs: Vec<(&str, &EmbeddingVector<T>)> = records.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut out = Vec::new();
    encode_vectors(&mut out, dim, &refs);
    write_atomic(path, &out)
}

pub fn read_vectors<T: Scalar>(path: &Path) -> Result<VectorRecords<T>, StoreError> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes);
    let out = decode_vectors(&mut r)?;
    if !r.is_at_end() {
        return Err(StoreError::Corrupt("trailing bytes after vector section".into()));
    }
    Ok(out)
}
