//! Named parameter storage, initialization, and checkpoint files.

use super::grid::ValueGrid;
use crate::error::{Error, Result};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: ValueGrid,
}

/// Flat, insertion-ordered parameter table. Ids are dense indices, so
/// optimizers can keep per-parameter state in parallel vectors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ValueGrid) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &ValueGrid {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ValueGrid {
        &mut self.entries[id].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    /// Total scalar count across all parameters (the model size).
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight draw.
pub fn init_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    channels: usize,
    time: usize,
    fan_in: usize,
) -> ValueGrid {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..channels * time)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    ValueGrid::new(channels, time, data).expect("init size")
}

/// Convolution weight `[C_out, C_in_per_group * K]`, fan-in
/// `C_in_per_group * K`.
pub fn init_conv_weight<R: Rng + ?Sized>(
    rng: &mut R,
    c_out: usize,
    c_in_per_group: usize,
    kernel: usize,
) -> ValueGrid {
    init_uniform(rng, c_out, c_in_per_group * kernel, c_in_per_group * kernel)
}

/// Transposed convolution weight `[C_in, C_out * K]`, fan-in `C_in * K`.
pub fn init_tconv_weight<R: Rng + ?Sized>(
    rng: &mut R,
    c_in: usize,
    c_out: usize,
    kernel: usize,
) -> ValueGrid {
    init_uniform(rng, c_in, c_out * kernel, c_in * kernel)
}

pub fn constant_grid(channels: usize, value: f64) -> ValueGrid {
    let mut g = ValueGrid::zeros(channels, 1);
    g.fill(value);
    g
}

const MAGIC: &[u8; 4] = b"BSPC";
const VERSION: u32 = 1;

/// Binary checkpoint: magic, version, a config JSON blob, then each
/// parameter as (name, dims, little-endian f64 data), and a SHA-256 of
/// everything before the trailer. The hash makes truncation and bit rot
/// loud instead of silently corrupting a model.
pub fn save_checkpoint(path: &Path, config_json: &str, store: &ParamStore) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, entry) in store.iter() {
        let name = entry.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!(
                "parameter name too long: {}",
                entry.name
            )));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(2u8);
        buf.extend_from_slice(&(entry.value.channels as u32).to_le_bytes());
        buf.extend_from_slice(&(entry.value.time as u32).to_le_bytes());
        for v in &entry.value.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint back; returns the stored config JSON and parameters
/// in their original order.
pub fn load_checkpoint(path: &Path) -> Result<(String, ParamStore)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 32 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, trailer) = raw.split_at(raw.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::Checkpoint("hash mismatch (corrupt file)".into()));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let config = String::from_utf8(cur.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config is not utf-8".into()))?;
    let n = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let ndim = cur.take(1)?[0];
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("bad ndim {ndim}")));
        }
        let channels = cur.u32()? as usize;
        let time = cur.u32()? as usize;
        let count = channels
            .checked_mul(time)
            .ok_or_else(|| Error::Checkpoint("dims overflow".into()))?;
        let mut data = Vec::with_capacity(count);
        for chunk in cur.take(count * 8)?.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        store.add(name, ValueGrid::new(channels, time, data)?)?;
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((config, store))
}
