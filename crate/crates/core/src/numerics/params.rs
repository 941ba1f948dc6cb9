//! Named parameter tensors and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian `u32`):
//! magic `FSPS`, format version, then one record per parameter until EOF:
//! name length, UTF-8 name, rank, each dimension, then the values as
//! little-endian `f32` in row-major order.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::tape::Matrix;
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSPS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with fan-in taken from the first dimension.
    FanIn,
    Uniform(f64),
    Normal(f64),
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    value: Matrix,
}

/// Parameters in creation order; creation order is also checkpoint order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, ParamId>,
    seed: u64,
    rng: seed::Rng,
}

fn as_matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Shape(format!("parameters are rank 1 or 2, got {shape:?}"))),
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            seed,
            rng: seed::rng(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let dims = as_matrix_dims(shape)?;
        let value = match init {
            Init::Zeros => Matrix::zeros(dims),
            Init::Ones => Matrix::ones(dims),
            Init::FanIn => {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                Matrix::from_shape_simple_fn(dims, || self.rng.random_range(-bound..bound))
            }
            Init::Uniform(b) => Matrix::from_shape_simple_fn(dims, || self.rng.random_range(-b..b)),
            Init::Normal(sd) => {
                let dist = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
                Matrix::from_shape_simple_fn(dims, || dist.sample(&mut self.rng))
            }
        };
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_owned(),
            shape: shape.to_vec(),
            value,
        });
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// FNV-1a over names and value bits; equal stores hash equal.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for v in &e.value {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &e.value {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Overwrites every parameter from a checkpoint. Names and shapes must
    /// match this store exactly.
    pub fn read_checkpoint<R: Read>(&mut self, mut r: R) -> Result<()> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut loaded = vec![false; self.entries.len()];
        while !cur.done() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = cur.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if shape != self.entries[id.0].shape {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {shape:?}, expected {:?}",
                    self.entries[id.0].shape
                )));
            }
            let value = &mut self.entries[id.0].value;
            for v in value.iter_mut() {
                let raw: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
                *v = f64::from(f32::from_le_bytes(raw));
            }
            loaded[id.0] = true;
        }
        if let Some(missing) = loaded.iter().position(|l| !l) {
            return Err(Error::Checkpoint(format!(
                "missing parameter `{}`",
                self.entries[missing].name
            )));
        }
        Ok(())
    }

    /// Rounds every value through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.value.mapv_inplace(|v| f64::from(v as f32));
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.grads[id.0] {
            Some(existing) => *existing += g,
            slot @ None => *slot = Some(g.as_standard_layout().into_owned()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }

    /// True when no parameter received a non-zero gradient.
    pub fn is_zero(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|&v| v == 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
