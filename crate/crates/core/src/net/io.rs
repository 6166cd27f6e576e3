//! `.stnet` parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `STNT` |
//! | 4     | format version (u32, currently 1) |
//! | 7 × 4 | seq_len, in_dim, d_model, n_heads, d_ff, n_encoder_layers, embed_dim (u32) |
//! | 8     | seed (u64) |
//! | …     | every learnable tensor in [`layout`](super::layout) order, f64 |
//! | 2 × d_model × 8 | batch-norm running mean, then running variance, f64 |

use std::fs;
use std::path::Path;

use super::{layout, NetConfig, NetworkParams, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STNT";
const VERSION: u32 = 1;

pub fn write_params(params: &NetworkParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(48 + 8 * (params.weights.len() + 2 * c.d_model));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.seq_len,
        c.in_dim,
        c.d_model,
        c.n_heads,
        c.d_ff,
        c.n_encoder_layers,
        c.embed_dim,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    let tail = [&params.bn_running_mean, &params.bn_running_var];
    for t in params.weights.tensors().into_iter().chain(tail) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated parameter file: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_params(buf: &[u8]) -> Result<NetworkParams> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a parameter file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported parameter file version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let config = NetConfig {
        seq_len: dims[0],
        in_dim: dims[1],
        d_model: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        n_encoder_layers: dims[5],
        embed_dim: dims[6],
        seed: cur.u64()?,
    };
    config.validate()?;
    let mut weights = ParamSet::zeros(&config);
    for ((_, _, len), t) in layout(&config).into_iter().zip(weights.tensors_mut()) {
        *t = cur.f64s(len)?;
    }
    let bn_running_mean = cur.f64s(config.d_model)?;
    let bn_running_var = cur.f64s(config.d_model)?;
    if cur.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameter payload",
            buf.len() - cur.pos
        )));
    }
    let params = NetworkParams {
        config,
        weights,
        bn_running_mean,
        bn_running_var,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&buf)
}

/// Loads a parameter file and checks its architecture against `expected`
/// (the seed is not compared).
pub fn load_params_expecting(path: impl AsRef<Path>, expected: &NetConfig) -> Result<NetworkParams> {
    let params = load_params(path)?;
    let got = NetConfig {
        seed: expected.seed,
        ..params.config
    };
    if got != *expected {
        return Err(Error::ConfigMismatch(format!(
            "file has {:?}, expected {:?}",
            params.config, expected
        )));
    }
    Ok(params)
}
