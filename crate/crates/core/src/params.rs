//! Named parameter store with seeded initialization and a flat binary
//! checkpoint container.
//!
//! Checkpoint layout (all integers little-endian):
//! `b"FDCKPT01"`, `u32` tensor count, then per tensor `u32` name length,
//! UTF-8 name, `u32` rank, `u64` per dimension, and the data as `f64`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use fusedepth_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 8] = b"FDCKPT01";

pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn insert(&mut self, name: &str, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.index.contains_key(name) {
            return Err(CoreError::invalid("param", format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::param(data, shape)?;
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t.clone());
        Ok(t)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.uniform_bound(name, shape, bound)
    }

    pub fn uniform_bound(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.insert(name, data, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, vec![0.0; shape.iter().product()], shape)
    }

    pub fn values(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        self.insert(name, data, shape)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn params(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.named().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for t in &self.tensors {
            t.zero_grad();
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.named() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(path, e))
    }

    /// Overwrites every parameter from a checkpoint. Names, order and
    /// shapes must match this store exactly.
    pub fn load_bytes(&self, bytes: &[u8], path: &Path) -> Result<()> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.error("bad checkpoint magic"));
        }
        let count = r.u32()? as usize;
        if count != self.tensors.len() {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint holds {count} tensors, model expects {}",
                self.tensors.len()
            )));
        }
        let mut staged = Vec::with_capacity(count);
        for (name, t) in self.named() {
            let len = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(len)?).map_err(|_| r.error("name is not UTF-8"))?;
            if got != name {
                return Err(CoreError::Checkpoint(format!("expected `{name}`, found `{got}`")));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            if shape != t.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "`{name}` has shape {shape:?}, model expects {:?}",
                    t.shape()
                )));
            }
            let mut data = Vec::with_capacity(t.numel());
            for _ in 0..t.numel() {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            staged.push(data);
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        for (t, data) in self.tensors.iter().zip(staged) {
            t.data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        self.load_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, msg: &str) -> CoreError {
        CoreError::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
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
