//! MBIF raster files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..4    b"MBI1"
//! 4..8    u32 version = 1
//! 8..20   u32 bands, u32 height, u32 width
//! 20..    bands*height*width f32 LE, band-major, row-major within a band
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const MAGIC: &[u8; 4] = b"MBI1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

pub fn encode(t: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [t.bands(), t.height(), t.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "mbif",
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len(), "truncated header"))
}

pub fn decode(bytes: &[u8]) -> Result<ImageTensor> {
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => {
            return Err(format_err(
                0,
                format!("bad magic {:?}", String::from_utf8_lossy(m)),
            ))
        }
        None => return Err(format_err(bytes.len(), "truncated magic")),
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let c = read_u32(bytes, 8)? as usize;
    let h = read_u32(bytes, 12)? as usize;
    let w = read_u32(bytes, 16)? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(format_err(8, format!("zero dimension {c}x{h}x{w}")));
    }
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| format_err(8, "dimension overflow"))?;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload, need {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(v);
    }
    ImageTensor::new(c, h, w, data)
}

pub fn write_mbif(t: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_mbif(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
