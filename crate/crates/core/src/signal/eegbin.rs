//! Little-endian recording container.
//!
//! Layout: `EEGB`, version u32, channels u32, samples u64, rate f64, one
//! label per channel (u16 byte length + UTF-8), then channels x samples f32
//! row-major. Samples are stored as f32, so a recording whose values are
//! already f32-representable round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::Recording;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGB";
pub const VERSION: u32 = 1;

pub fn write_to(rec: &Recording, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rec.n_channels() as u32).to_le_bytes())?;
    w.write_all(&(rec.n_samples() as u64).to_le_bytes())?;
    w.write_all(&rec.sample_rate_hz.to_le_bytes())?;
    for label in &rec.channel_labels {
        let bytes = label.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "label longer than 65535 bytes"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
    }
    let mut buf = Vec::with_capacity(rec.data().len() * 4);
    for &v in rec.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn to_bytes(rec: &Recording) -> Vec<u8> {
    let mut out = Vec::new();
    write_to(rec, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn save(rec: &Recording, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_to(rec, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.origin, format!("truncated at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Recording> {
    let mut cur = Cursor { bytes, pos: 0, origin };
    if cur.take(4)? != MAGIC {
        return Err(Error::format(origin, "missing EEGB magic"));
    }
    let version = u32::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let c = u32::from_le_bytes(cur.array()?) as usize;
    let s = u64::from_le_bytes(cur.array()?);
    let rate = f64::from_le_bytes(cur.array()?);
    let s = usize::try_from(s).map_err(|_| Error::format(origin, "sample count overflows"))?;
    let mut labels = Vec::with_capacity(c.min(4096));
    for _ in 0..c {
        let len = u16::from_le_bytes(cur.array()?) as usize;
        let raw = cur.take(len)?;
        let label = std::str::from_utf8(raw).map_err(|_| Error::format(origin, "label is not UTF-8"))?;
        labels.push(label.to_string());
    }
    let n = c
        .checked_mul(s)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "sample block overflows"))?;
    let raw = cur.take(n)?;
    if cur.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after sample block"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64)
        .collect();
    Recording::from_flat(labels, data, s, rate)
}

pub fn load(path: &Path) -> Result<Recording> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
