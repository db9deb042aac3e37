//! Bit-exact checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "WHDNN" (5 bytes)
//! format version  u32
//! num_users, num_items, dim, num_layers   u64 × 4
//! tensors, canonical order: rank u64, dims (rank × u64), data f64 row-major
//! checksum u64 = wrapping byte sum of everything before it
//! ```
//!
//! WaveHDNN checkpoints carry `14 + 3·num_layers` tensors; LightGCN carries
//! the two embedding tables. The tensor count disambiguates the model kind
//! on load.

use super::{LightGcnParams, Mlp, WaveHdnnParams};
use crate::{Error, Result};
use ndarray::Array2;
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"WHDNN";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model in checkpoint form.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointPayload {
    WaveHdnn(WaveHdnnParams),
    LightGcn(LightGcnParams),
}

impl CheckpointPayload {
    pub fn user_embed(&self) -> &Array2<f64> {
        match self {
            CheckpointPayload::WaveHdnn(p) => &p.user_embed,
            CheckpointPayload::LightGcn(p) => &p.user_embed,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self {
            CheckpointPayload::WaveHdnn(p) => (p.num_users(), p.num_items(), p.dim, p.num_layers),
            CheckpointPayload::LightGcn(p) => {
                (p.user_embed.nrows(), p.item_embed.nrows(), p.dim, p.num_layers)
            }
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            CheckpointPayload::WaveHdnn(_) => "wavehdnn",
            CheckpointPayload::LightGcn(_) => "lightgcn",
        }
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, t: &Array2<f64>) {
    push_u64(buf, 2);
    push_u64(buf, t.nrows() as u64);
    push_u64(buf, t.ncols() as u64);
    for &v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

/// Serialize to the documented byte layout.
pub fn to_bytes(payload: &CheckpointPayload) -> Vec<u8> {
    let (num_users, num_items, dim, num_layers) = payload.dims();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    push_u64(&mut buf, num_users as u64);
    push_u64(&mut buf, num_items as u64);
    push_u64(&mut buf, dim as u64);
    push_u64(&mut buf, num_layers as u64);
    let tensors = match payload {
        CheckpointPayload::WaveHdnn(p) => p.tensors(),
        CheckpointPayload::LightGcn(p) => p.tensors(),
    };
    for (_, t) in tensors {
        push_tensor(&mut buf, t);
    }
    let checksum = byte_sum(&buf);
    push_u64(&mut buf, checksum);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_tensor(cur: &mut Cursor) -> Result<Array2<f64>> {
    let rank = cur.u64()?;
    if rank != 2 {
        return Err(Error::CheckpointFormat(format!(
            "tensor rank {rank} unsupported (expected 2)"
        )));
    }
    let rows = cur.u64()? as usize;
    let cols = cur.u64()? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::CheckpointFormat("tensor size overflow".into()))?;
    let raw = cur.take(count * 8)?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::CheckpointFormat(format!("tensor shape: {e}")))
}

/// Parse and checksum-verify a checkpoint.
pub fn from_bytes(bytes: &[u8]) -> Result<CheckpointPayload> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let num_users = cur.u64()? as usize;
    let num_items = cur.u64()? as usize;
    let dim = cur.u64()? as usize;
    let num_layers = cur.u64()? as usize;

    let mut tensors = Vec::new();
    while cur.remaining() > 8 {
        tensors.push(read_tensor(&mut cur)?);
    }
    let body_end = cur.pos;
    let stored = cur.u64()?;
    let computed = byte_sum(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::CheckpointFormat(format!(
            "checksum mismatch: stored {stored}, computed {computed}"
        )));
    }

    let expect_shape = |t: &Array2<f64>, rows: usize, cols: usize, what: &str| -> Result<()> {
        if t.dim() != (rows, cols) {
            return Err(Error::CheckpointFormat(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        Ok(())
    };

    if tensors.len() == 2 {
        expect_shape(&tensors[0], num_users, dim, "user_embed")?;
        expect_shape(&tensors[1], num_items, dim, "item_embed")?;
        let mut it = tensors.into_iter();
        return Ok(CheckpointPayload::LightGcn(LightGcnParams {
            user_embed: it.next().unwrap(),
            item_embed: it.next().unwrap(),
            num_layers,
            dim,
        }));
    }

    let expected = 14 + 3 * num_layers;
    if tensors.len() != expected {
        return Err(Error::CheckpointFormat(format!(
            "tensor count {} matches neither LightGCN (2) nor WaveHDNN ({expected})",
            tensors.len()
        )));
    }

    let mut it = tensors.into_iter();
    let mut next = |what: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
        let t = it.next().expect("count checked");
        expect_shape(&t, rows, cols, what)?;
        Ok(t)
    };
    let user_embed = next("user_embed", num_users, dim)?;
    let item_embed = next("item_embed", num_items, dim)?;
    let mut mlp = |what: &str, in_dim: usize| -> Result<Mlp> {
        Ok(Mlp {
            w1: next(&format!("{what}.w1"), in_dim, dim)?,
            b1: next(&format!("{what}.b1"), 1, dim)?,
            w2: next(&format!("{what}.w2"), dim, dim)?,
            b2: next(&format!("{what}.b2"), 1, dim)?,
        })
    };
    let mlp1 = mlp("mlp1", dim)?;
    let mlp2 = mlp("mlp2", dim)?;
    let mlp_final = mlp("mlp_final", 2 * dim)?;
    let mut wave_filters_user = Vec::with_capacity(num_layers);
    let mut wave_filters_item = Vec::with_capacity(num_layers);
    let mut wave_transforms = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        wave_filters_user.push(next(&format!("wave_filter_user.{l}"), num_users, 1)?);
        wave_filters_item.push(next(&format!("wave_filter_item.{l}"), num_items, 1)?);
        wave_transforms.push(next(&format!("wave_transform.{l}"), dim, dim)?);
    }
    Ok(CheckpointPayload::WaveHdnn(WaveHdnnParams {
        user_embed,
        item_embed,
        mlp1,
        mlp2,
        mlp_final,
        wave_filters_user,
        wave_filters_item,
        wave_transforms,
        num_layers,
        dim,
    }))
}

pub fn save<P: AsRef<Path>>(path: P, payload: &CheckpointPayload) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, to_bytes(payload)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<P: AsRef<Path>>(path: P) -> Result<CheckpointPayload> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
