//! Fingerprints and the little-endian tensor record shared by the feature
//! cache and checkpoints.

use std::io::{self, Read, Write};

use ndarray::Array2;
use sha2::{Digest, Sha256};

/// First eight bytes of SHA-256 over `text`, little-endian.
pub fn fingerprint(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "string length out of range"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Element type of a serialized tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Payload {
    F32,
    F64,
}

/// `rank u32, dims u32 x rank, payload` for a matrix.
pub(crate) fn write_tensor<W: Write>(w: &mut W, m: &Array2<f64>, payload: Payload) -> io::Result<()> {
    write_u32(w, 2)?;
    write_u32(w, m.nrows() as u32)?;
    write_u32(w, m.ncols() as u32)?;
    for v in m.iter() {
        match payload {
            Payload::F32 => w.write_all(&(*v as f32).to_le_bytes())?,
            Payload::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

pub(crate) fn read_tensor<R: Read>(r: &mut R, payload: Payload) -> io::Result<Array2<f64>> {
    let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let rank = read_u32(r)?;
    if rank != 2 {
        return Err(invalid("only rank-2 tensors are supported"));
    }
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|n| *n <= 1 << 28)
        .ok_or_else(|| invalid("tensor too large"))?;
    let mut data = Vec::with_capacity(n);
    match payload {
        Payload::F32 => {
            let mut b = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
        Payload::F64 => {
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
        }
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| invalid(&e.to_string()))
}

/// Half-up rounding to `dp` decimal places, tolerant of binary
/// representation error (2.675 rounds to 2.68).
pub fn round_half_up(x: f64, dp: u32) -> f64 {
    let scale = 10f64.powi(dp as i32);
    let scaled = x * scale;
    let nudge = 1e-9 * scaled.abs().max(1.0);
    if scaled >= 0.0 {
        (scaled + 0.5 + nudge).floor() / scale
    } else {
        -((-scaled + 0.5 + nudge).floor()) / scale
    }
}
