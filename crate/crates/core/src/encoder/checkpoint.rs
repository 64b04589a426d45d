//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `MIRA0001`; u32 d, L, M, K, |V|, S_max,
//! P_max; f64 λ; u32 ffn; f64 leaky slope; then tensors sorted by name until
//! end of file, each as u32 name length, name bytes, u32 rank, u32 dims,
//! f64 values.

use std::fs;
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::micg::Reader;

const MAGIC: &[u8; 8] = b"MIRA0001";

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [c.d, c.layers, c.heads, c.k, c.vocab_size, c.s_max, c.p_max] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.lambda.to_le_bytes());
    out.extend_from_slice(&(c.ffn as u32).to_le_bytes());
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());
    for (id, name) in params.names().iter().enumerate() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = params.shape(id);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &dim in shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &params.tensors[id].data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::BadFormat("checkpoint: bad magic".into()));
    }
    let mut h = [0usize; 7];
    for v in h.iter_mut() {
        *v = r.u32()? as usize;
    }
    let lambda = r.f64()?;
    let ffn = r.u32()? as usize;
    let leaky_slope = r.f64()?;
    let config = ModelConfig {
        d: h[0],
        layers: h[1],
        heads: h[2],
        k: h[3],
        vocab_size: h[4],
        s_max: h[5],
        p_max: h[6],
        lambda,
        ffn,
        leaky_slope,
    };
    let mut named = Vec::new();
    while r.pos < bytes.len() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::BadFormat(format!("checkpoint: tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        named.push((name, shape, data));
    }
    ModelParams::from_named(config, named)
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, write_checkpoint(params)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
