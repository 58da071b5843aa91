//! EVMF tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                         |
//! |------------------|---------------------------------|
//! | 4                | magic `b"EVMF"`                 |
//! | 4                | `u32` version, always 1         |
//! | 4                | `u32` rank                      |
//! | 8 * rank         | `u64` dims                      |
//! | 8 * prod(dims)   | `f64` values, row-major         |

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVMF";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 8 * t.len());
    write_to(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn write_to(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Decodes one tensor from the front of `bytes`, returning it and the number of
/// bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut cur = bytes;
    let t = read_from(&mut cur)?;
    Ok((t, bytes.len() - cur.len()))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported EVMF version {version}")));
    }
    let rank = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = read_u64(r)?;
        shape.push(usize::try_from(d).map_err(|_| Error::format("dimension overflows usize"))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("element count overflows"))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..count {
        read_exact(r, &mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(format!("truncated EVMF data: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
