//! Binary embedding sidecar, little-endian throughout.
//!
//! Header: magic `STCE`, `u16` version, `u16` dim. Then records of
//! `u32` frame, `u32` detection index, and `dim` `f32` values.

use std::path::Path;

use super::{read_bytes, write_atomic, IoError};

pub const SIDECAR_MAGIC: [u8; 4] = *b"STCE";
pub const SIDECAR_VERSION: u16 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub frame: u32,
    /// Position of the detection within its frame in the detection file.
    pub det_index: u32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSidecar {
    pub dim: u16,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingSidecar {
    pub fn record_len(&self) -> usize {
        8 + 4 * usize::from(self.dim)
    }

    pub fn encode(&self) -> Result<Vec<u8>, IoError> {
        if self.dim == 0 {
            return Err(format_err("<memory>", 6, "dim must be positive"));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * self.record_len());
        out.extend_from_slice(&SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        for (i, r) in self.records.iter().enumerate() {
            if r.values.len() != usize::from(self.dim) {
                return Err(format_err(
                    "<memory>",
                    out.len(),
                    format!("record {i} has {} values, header says {}", r.values.len(), self.dim),
                ));
            }
            out.extend_from_slice(&r.frame.to_le_bytes());
            out.extend_from_slice(&r.det_index.to_le_bytes());
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], file: &str) -> Result<Self, IoError> {
        if bytes.len() < HEADER_LEN {
            return Err(format_err(file, bytes.len(), "truncated header"));
        }
        if bytes[..4] != SIDECAR_MAGIC {
            return Err(format_err(
                file,
                0,
                format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
            ));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SIDECAR_VERSION {
            return Err(format_err(file, 4, format!("unsupported version {version}")));
        }
        let dim = u16::from_le_bytes([bytes[6], bytes[7]]);
        if dim == 0 {
            return Err(format_err(file, 6, "dim must be positive"));
        }
        let rec = 8 + 4 * usize::from(dim);
        let body = &bytes[HEADER_LEN..];
        if !body.len().is_multiple_of(rec) {
            let offset = HEADER_LEN + body.len() / rec * rec;
            return Err(format_err(
                file,
                offset,
                format!("truncated record: {} of {rec} bytes", body.len() % rec),
            ));
        }
        let word = |b: &[u8], at: usize| [b[at], b[at + 1], b[at + 2], b[at + 3]];
        let records = body
            .chunks_exact(rec)
            .map(|c| EmbeddingRecord {
                frame: u32::from_le_bytes(word(c, 0)),
                det_index: u32::from_le_bytes(word(c, 4)),
                values: (0..usize::from(dim))
                    .map(|k| f32::from_le_bytes(word(c, 8 + 4 * k)))
                    .collect(),
            })
            .collect();
        Ok(Self { dim, records })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::decode(&read_bytes(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let bytes = self.encode().map_err(|e| relabel(e, path))?;
        write_atomic(path, &bytes)
    }
}

fn format_err(file: &str, offset: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        file: file.to_string(),
        offset,
        message: message.into(),
    }
}

fn relabel(e: IoError, path: &Path) -> IoError {
    match e {
        IoError::Format { offset, message, .. } => format_err(&path.display().to_string(), offset, message),
        other => other,
    }
}
