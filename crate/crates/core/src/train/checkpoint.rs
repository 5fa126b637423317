//! `NGCK` checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      "NGCK"
//! version    u32
//! fingerprint [u8; 32]    SHA-256 of the architecture TOML below
//! seed       u64
//! step       u64
//! arch       u32 length + UTF-8 TOML
//! count      u32
//! per parameter, in name order:
//!   name     u16 length + UTF-8
//!   ndim     u8
//!   dims     u64 * ndim
//!   data     f32 * prod(dims)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{hex, ArchConfig};
use crate::tensor::{Float, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"NGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub seed: u64,
    pub step: u64,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new<T: Float>(arch: ArchConfig, seed: u64, step: u64, params: &ParamStore<T>) -> Self {
        Self {
            arch,
            seed,
            step,
            params: params.cast(),
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.arch.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let arch = self.arch.to_toml();
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = p.value.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let seed = r.u64()?;
        let step = r.u64()?;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(origin, "architecture is not UTF-8"))?;
        let arch: ArchConfig =
            toml::from_str(text).map_err(|e| Error::format(origin, format!("architecture config: {e}")))?;
        if arch.fingerprint() != fingerprint {
            return Err(Error::format(origin, "stored fingerprint does not match the stored architecture"));
        }
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(origin, "parameter too large"))?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if params.contains(&name) {
                return Err(Error::format(origin, format!("duplicate parameter `{name}`")));
            }
            let t = Tensor::new(&shape, data).map_err(|e| Error::format(origin, format!("`{name}`: {e}")))?;
            params.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            arch,
            seed,
            step,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and refuses a checkpoint built for another architecture unless
    /// `allow_mismatch` is set.
    pub fn load_for(path: &Path, arch: &ArchConfig, allow_mismatch: bool) -> Result<Self> {
        let ck = Self::load(path)?;
        let (want, got) = (arch.fingerprint(), ck.fingerprint());
        if want != got {
            if !allow_mismatch {
                return Err(Error::FingerprintMismatch {
                    expected: hex(&want),
                    found: hex(&got),
                });
            }
            log::warn!("{}: architecture fingerprint mismatch overridden", path.display());
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.origin, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
}
