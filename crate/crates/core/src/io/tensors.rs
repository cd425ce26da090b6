//! Named `f32` tensor archive used for dumping intermediate maps.
//!
//! Layout (little-endian): magic `STCT`, `u16` version, `u32` entry count,
//! then per entry a `u16` name length, UTF-8 name, `u8` rank, `rank` `u32`
//! dims, and the row-major values.

use std::path::Path;

use super::{read_bytes, write_atomic, IoError};
use crate::tdrm::TdrmParams;
use crate::tebm::TebmParams;
use crate::tensor::{BatchNorm, ConvBlock, ConvParams, FeatureMap, Vector};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"STCT";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<u32>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: Vec<TensorEntry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.at < n {
            return Err(IoError::Format {
                file: self.file.to_string(),
                offset: self.at,
                message: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, IoError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, IoError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> IoError {
        IoError::Format {
            file: self.file.to_string(),
            offset,
            message: message.into(),
        }
    }
}

impl TensorArchive {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<u32>, values: Vec<f32>) {
        debug_assert_eq!(shape.iter().map(|&d| d as usize).product::<usize>(), values.len());
        self.entries.push(TensorEntry {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn push_map(&mut self, name: impl Into<String>, m: &FeatureMap) {
        let (c, h, w) = m.shape();
        self.push(name, vec![c as u32, h as u32, w as u32], m.values().to_vec());
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.shape.len() as u8);
            for d in &e.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], file: &str) -> Result<Self, IoError> {
        let mut r = Reader { bytes, at: 0, file };
        if r.take(4, "magic")? != ARCHIVE_MAGIC {
            return Err(r.fail(0, "bad magic"));
        }
        let version = r.u16("version")?;
        if version != ARCHIVE_VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let start = r.at;
            let len = usize::from(r.u16("name length")?);
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| r.fail(start + 2, "name is not UTF-8"))?
                .to_string();
            let rank = r.u8("rank")?;
            let mut shape = Vec::with_capacity(usize::from(rank));
            for _ in 0..rank {
                shape.push(r.u32("dims")?);
            }
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let n = n
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| r.fail(start, "shape overflows"))?;
            let raw = r.take(4 * n, "values")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(TensorEntry { name, shape, values });
        }
        if r.at != bytes.len() {
            return Err(r.fail(r.at, "trailing bytes"));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::decode(&read_bytes(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.encode())
    }
}

fn missing(file: &str, name: &str, detail: impl Into<String>) -> IoError {
    IoError::Format {
        file: file.to_string(),
        offset: 0,
        message: format!("tensor `{name}`: {}", detail.into()),
    }
}

impl TensorArchive {
    fn vector(&self, file: &str, name: &str) -> Result<Vec<f32>, IoError> {
        let e = self.get(name).ok_or_else(|| missing(file, name, "missing"))?;
        if e.shape.len() != 1 {
            return Err(missing(file, name, format!("expected rank 1, got {:?}", e.shape)));
        }
        Ok(e.values.clone())
    }

    fn push_conv(&mut self, prefix: &str, c: &ConvParams) {
        let shape = [c.out_channels, c.in_channels, c.kernel_h, c.kernel_w].map(|d| d as u32);
        self.push(format!("{prefix}.weight"), shape.to_vec(), c.weights.clone());
        self.push(format!("{prefix}.bias"), vec![c.out_channels as u32], c.bias.clone());
    }

    fn conv(&self, file: &str, prefix: &str) -> Result<ConvParams, IoError> {
        let name = format!("{prefix}.weight");
        let w = self.get(&name).ok_or_else(|| missing(file, &name, "missing"))?;
        let &[o, i, kh, kw] = w.shape.as_slice() else {
            return Err(missing(file, &name, format!("expected rank 4, got {:?}", w.shape)));
        };
        let c = ConvParams {
            out_channels: o as usize,
            in_channels: i as usize,
            kernel_h: kh as usize,
            kernel_w: kw as usize,
            weights: w.values.clone(),
            bias: self.vector(file, &format!("{prefix}.bias"))?,
        };
        c.validate().map_err(|e| missing(file, prefix, e.to_string()))?;
        Ok(c)
    }

    fn push_block(&mut self, prefix: &str, b: &ConvBlock) {
        self.push_conv(&format!("{prefix}.conv1"), &b.conv1);
        let n = b.bn.scale.len() as u32;
        for (k, v) in [
            ("scale", &b.bn.scale),
            ("shift", &b.bn.shift),
            ("mean", &b.bn.mean),
            ("var", &b.bn.var),
        ] {
            self.push(format!("{prefix}.bn.{k}"), vec![n], v.clone());
        }
        self.push(format!("{prefix}.bn.eps"), vec![1], vec![b.bn.eps]);
        self.push_conv(&format!("{prefix}.conv2"), &b.conv2);
    }

    fn block(&self, file: &str, prefix: &str) -> Result<ConvBlock, IoError> {
        let v = |k: &str| self.vector(file, &format!("{prefix}.bn.{k}"));
        let eps = v("eps")?;
        let bn = BatchNorm {
            scale: v("scale")?,
            shift: v("shift")?,
            mean: v("mean")?,
            var: v("var")?,
            eps: *eps.first().ok_or_else(|| missing(file, prefix, "empty bn.eps"))?,
        };
        Ok(ConvBlock {
            conv1: self.conv(file, &format!("{prefix}.conv1"))?,
            bn,
            conv2: self.conv(file, &format!("{prefix}.conv2"))?,
        })
    }

    pub fn from_tebm(p: &TebmParams) -> Self {
        let mut a = Self::default();
        a.push_conv("tebm.cross_linear", &p.cross_linear);
        a.push(
            "tebm.ln_gain",
            vec![p.ln_gain.dim() as u32],
            p.ln_gain.values().to_vec(),
        );
        a.push(
            "tebm.ln_shift",
            vec![p.ln_shift.dim() as u32],
            p.ln_shift.values().to_vec(),
        );
        a.push_block("tebm.psi", &p.psi);
        a
    }

    pub fn to_tebm(&self, file: &str) -> Result<TebmParams, IoError> {
        let p = TebmParams {
            cross_linear: self.conv(file, "tebm.cross_linear")?,
            ln_gain: Vector::new(self.vector(file, "tebm.ln_gain")?),
            ln_shift: Vector::new(self.vector(file, "tebm.ln_shift")?),
            psi: self.block(file, "tebm.psi")?,
        };
        p.validate().map_err(|e| missing(file, "tebm", e.to_string()))?;
        Ok(p)
    }

    pub fn from_tdrm(p: &TdrmParams) -> Self {
        let mut a = Self::default();
        a.push_conv("tdrm.reduce", &p.reduce);
        a.push_conv("tdrm.fc", &p.fc);
        a.push_conv("tdrm.fs", &p.fs);
        a.push_block("tdrm.psi", &p.psi);
        a
    }

    pub fn to_tdrm(&self, file: &str) -> Result<TdrmParams, IoError> {
        let p = TdrmParams {
            reduce: self.conv(file, "tdrm.reduce")?,
            fc: self.conv(file, "tdrm.fc")?,
            fs: self.conv(file, "tdrm.fs")?,
            psi: self.block(file, "tdrm.psi")?,
        };
        p.validate().map_err(|e| missing(file, "tdrm", e.to_string()))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut a = TensorArchive::default();
        let m = FeatureMap::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f32).unwrap();
        a.push_map("hm", &m);
        a.push("scalar", vec![], vec![1.5]);
        let bytes = a.encode();
        let b = TensorArchive::decode(&bytes, "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(b.get("hm").unwrap().shape, vec![2, 3, 4]);
    }

    #[test]
    fn params_roundtrip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = TebmParams::random(4, 3, &mut rng);
        let a = TensorArchive::decode(&TensorArchive::from_tebm(&t).encode(), "p").unwrap();
        assert_eq!(a.to_tebm("p").unwrap(), t);
        let d = TdrmParams::random(5, 3, 6, 2, &mut rng);
        let a = TensorArchive::decode(&TensorArchive::from_tdrm(&d).encode(), "p").unwrap();
        assert_eq!(a.to_tdrm("p").unwrap(), d);
        assert!(a.to_tebm("p").is_err());
    }

    #[test]
    fn truncation_is_reported() {
        let mut a = TensorArchive::default();
        a.push("v", vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let bytes = a.encode();
        assert!(matches!(
            TensorArchive::decode(&bytes[..bytes.len() - 1], "a"),
            Err(IoError::Format { .. })
        ));
        assert!(TensorArchive::decode(b"NOPE\x01\x00\x00\x00\x00\x00", "a").is_err());
    }
}
