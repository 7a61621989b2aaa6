//! Checkpoint container: a little-endian dump of named f32 tensors.
//!
//! Layout: magic "SMSD", format version (u32), tensor count (u32), then per
//! tensor: name length (u16), name bytes, rank (u8, always 2), one u32 per
//! dimension, and the row-major f32 payload. Writes go to a sibling temp
//! file and rename into place so a crash never leaves a torn checkpoint.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SMSD";
pub const VERSION: u32 = 1;

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

/// Store a u64 seed as two f32 bit patterns (not values), losslessly.
pub fn seed_to_f32_pair(seed: u64) -> [f32; 2] {
    [f32::from_bits(seed as u32), f32::from_bits((seed >> 32) as u32)]
}

pub fn seed_from_f32_pair(pair: [f32; 2]) -> u64 {
    pair[0].to_bits() as u64 | ((pair[1].to_bits() as u64) << 32)
}

pub fn save(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        w.write_all(&MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, t) in tensors {
            if name.len() > u16::MAX as usize {
                return Err(bad(path, format!("tensor name too long: {} bytes", name.len())));
            }
            w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&[2u8]).map_err(io)?;
            w.write_all(&(t.rows as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(t.cols as u32).to_le_bytes()).map_err(io)?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    fn take<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(|_| bad(path, "truncated"))?;
        Ok(buf)
    }

    if take::<4>(&mut r, path)? != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut r, path)?);
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r, path)?) as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut r, path)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad(path, "truncated"))?;
        let name = String::from_utf8(name).map_err(|_| bad(path, "tensor name not UTF-8"))?;
        let rank = take::<1>(&mut r, path)?[0];
        if rank != 2 {
            return Err(bad(path, format!("tensor {name:?} has rank {rank}, expected 2")));
        }
        let rows = u32::from_le_bytes(take(&mut r, path)?) as usize;
        let cols = u32::from_le_bytes(take(&mut r, path)?) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| bad(path, format!("tensor {name:?} shape {rows}x{cols} too large")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(take(&mut r, path)?));
        }
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after last tensor"));
    }
    Ok(tensors)
}
