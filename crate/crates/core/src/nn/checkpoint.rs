//! `OTWT` weight container.
//!
//! Layout (little-endian): magic `OTWT`, version u32, config length u32,
//! config text, entry count u32, then per entry a u16 name length, the
//! name, u32 rank, u64 dims, u64 element offset into the payload; finally
//! the f32 payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OTWT";
const VERSION: u32 = 1;

pub type Fingerprint = [u8; 16];

pub fn fingerprint_of(bytes: &[u8]) -> Fingerprint {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters together with the config text that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(config: String, params: ParamSet) -> Self {
        Checkpoint { config, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (_, name, t) in self.params.iter() {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        for (_, _, t) in self.params.iter() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an OTWT checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let clen = r.u32()? as usize;
        let config = String::from_utf8(r.take(clen)?.to_vec())
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n as usize),
                [a, b] => (*a as usize, *b as usize),
                _ => return Err(Error::Format(format!("unsupported rank {rank} for {name}"))),
            };
            let offset = r.u64()? as usize;
            manifest.push((name, rows, cols, offset));
        }
        let payload = &bytes[r.pos..];
        let mut params = ParamSet::new();
        for (name, rows, cols, offset) in manifest {
            let n = rows * cols;
            let start = offset * 4;
            let slice = payload
                .get(start..start + n * 4)
                .ok_or_else(|| Error::Format(format!("payload truncated at {name}")))?;
            let data = slice
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            params.add(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Ok(Checkpoint { config, params })
    }

    pub fn fingerprint(&self) -> Result<Fingerprint> {
        Ok(fingerprint_of(&self.to_bytes()?))
    }

    /// Writes the checkpoint and returns its fingerprint.
    pub fn write(&self, path: &Path) -> Result<Fingerprint> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(fingerprint_of(&bytes))
    }

    pub fn read(path: &Path) -> Result<(Self, Fingerprint)> {
        let bytes = std::fs::read(path)?;
        Ok((Self::from_bytes(&bytes)?, fingerprint_of(&bytes)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
