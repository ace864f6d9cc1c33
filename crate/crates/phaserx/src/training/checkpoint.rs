//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PRX1" | version u32
//! config_len u32 | config TOML bytes
//! step u64 | master_seed u64
//! param_count u32
//! per parameter, in canonical order:
//!   name_len u32 | name bytes | dtype u8 (0 = f32, 1 = f64)
//!   ndim u32 | dims u32 * ndim
//!   values raw | first moments raw | second moments raw
//! ```
//!
//! Batch streams are derived from `(master_seed, step, element)`, so the
//! master seed plus the step counter is the complete RNG state; resuming
//! from a checkpoint replays exactly the stream an uninterrupted run would
//! have seen.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{Dtype, Real};
use crate::receiver::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRX1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    /// TOML snapshot of the run configuration.
    pub config_text: String,
    /// Number of optimizer steps already taken.
    pub step: u64,
    /// Master seed; with `step` this is the full RNG state.
    pub master_seed: u64,
    pub params: ModelParams<F>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint<F: Real>(ckpt: &Checkpoint<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, ckpt.config_text.len() as u32);
    out.extend_from_slice(ckpt.config_text.as_bytes());
    put_u64(&mut out, ckpt.step);
    put_u64(&mut out, ckpt.master_seed);
    put_u32(&mut out, ckpt.params.len() as u32);
    for p in ckpt.params.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        out.push(F::DTYPE.tag());
        put_u32(&mut out, p.tensor.shape().len() as u32);
        for &d in p.tensor.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes_vec());
        }
        for &v in &p.m {
            out.extend_from_slice(&v.to_le_bytes_vec());
        }
        for &v in &p.v {
            out.extend_from_slice(&v.to_le_bytes_vec());
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = cur.u32()? as usize;
    let config_text = String::from_utf8(cur.take(config_len)?.to_vec())
        .map_err(|_| Error::CheckpointFormat("config is not valid utf-8".into()))?;
    let step = cur.u64()?;
    let master_seed = cur.u64()?;
    let param_count = cur.u32()? as usize;
    let elem = F::DTYPE.size();
    let mut rebuilt: Vec<(String, Vec<usize>, Vec<F>, Vec<F>, Vec<F>)> =
        Vec::with_capacity(param_count);
    for _ in 0..param_count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::CheckpointFormat("parameter name is not utf-8".into()))?;
        let tag = cur.take(1)?[0];
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| Error::CheckpointFormat(format!("unknown dtype tag {tag}")))?;
        if dtype != F::DTYPE {
            return Err(Error::CheckpointFormat(format!(
                "checkpoint stores {:?} but {:?} was requested",
                dtype,
                F::DTYPE
            )));
        }
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut read_vec = |cur: &mut Cursor| -> Result<Vec<F>> {
            let raw = cur.take(numel * elem)?;
            Ok(raw.chunks_exact(elem).map(F::from_le_slice).collect())
        };
        let values = read_vec(&mut cur)?;
        let m = read_vec(&mut cur)?;
        let v = read_vec(&mut cur)?;
        rebuilt.push((name, shape, values, m, v));
    }
    if cur.pos != bytes.len() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let params = ModelParams::from_raw(rebuilt)?;
    Ok(Checkpoint { config_text, step, master_seed, params })
}

pub fn save_checkpoint<F: Real>(path: &Path, ckpt: &Checkpoint<F>) -> Result<()> {
    let bytes = encode_checkpoint(ckpt);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Checkpoint<F>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
