//! RPDC checkpoint files.
//!
//! ```text
//! b"RPDC", u32 version = 1, u32 block count
//! per block: u16 name length, UTF-8 name, u32 rank, rank x u32 dims,
//!            prod(dims) x f32 payload
//! ```
//!
//! All integers and floats are little-endian. The first block, `config`,
//! holds `[bands, hidden, blocks, embed_dim, sci, input_is_residual]` as
//! f32; the rest are the parameter blocks in layout order.

use std::fs;
use std::path::Path;

use super::model::{DenoiserParams, InputMode, NetConfig, ParamBlock};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RPDC";
pub const VERSION: u32 = 1;
const CONFIG_BLOCK: &str = "config";

fn put_block(out: &mut Vec<u8>, name: &str, dims: &[usize], values: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(params: &DenoiserParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.blocks().len() as u32 + 1).to_le_bytes());
    let header = [
        cfg.bands as f32,
        cfg.hidden as f32,
        cfg.blocks as f32,
        cfg.embed_dim as f32,
        cfg.sci as u8 as f32,
        (cfg.input == InputMode::Residual) as u8 as f32,
    ];
    put_block(&mut out, CONFIG_BLOCK, &[header.len()], header.into_iter());
    for b in params.blocks() {
        put_block(
            &mut out,
            &b.name,
            &b.dims,
            b.value.iter().map(|&v| v as f32),
        );
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            what: "rpdc",
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.err(format!("truncated, need {n} more bytes")))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| self.err("block name is not UTF-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let start = self.pos;
        let values: Vec<f32> = self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            self.pos = start + 4 * i;
            return Err(self.err(format!("non-finite value in block {name}")));
        }
        Ok((name, dims, values))
    }
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let (name, _, header) = r.block()?;
    if name != CONFIG_BLOCK || header.len() != 6 {
        return Err(r.err("first block must be a 6-value config"));
    }
    let config = NetConfig {
        bands: header[0] as usize,
        hidden: header[1] as usize,
        blocks: header[2] as usize,
        embed_dim: header[3] as usize,
        sci: header[4] != 0.0,
        input: if header[5] != 0.0 {
            InputMode::Residual
        } else {
            InputMode::Latent
        },
    };
    config.validate()?;
    let mut blocks = Vec::with_capacity(count.saturating_sub(1));
    for _ in 1..count {
        let (name, dims, values) = r.block()?;
        blocks.push(ParamBlock {
            name,
            dims,
            value: values.into_iter().map(f64::from).collect(),
            frozen: false,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    DenoiserParams::from_blocks(config, blocks)
}

pub fn save(params: &DenoiserParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        for cfg in [
            NetConfig::new(4),
            NetConfig {
                sci: false,
                input: InputMode::Residual,
                hidden: 8,
                blocks: 1,
                ..NetConfig::new(3)
            },
        ] {
            let p = DenoiserParams::init(cfg, 3).unwrap();
            let bytes = encode(&p);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.config(), p.config());
            assert_eq!(back.blocks(), p.blocks());
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn corrupt_files() {
        let p = DenoiserParams::init(
            NetConfig {
                hidden: 4,
                blocks: 1,
                ..NetConfig::new(2)
            },
            1,
        )
        .unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
