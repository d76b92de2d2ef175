//! Named parameter storage and the checkpoint format.
//!
//! Checkpoints are a flat record of (name, shape, raw f64 values) with a
//! version header; round trips are bit-exact.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::NetError;

const MAGIC: &[u8; 8] = b"SDRIVE01";

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Flat container of named parameters and their gradients.
#[derive(Default)]
pub struct ParamVault {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamVault {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.rows, value.cols);
        self.entries.push(Entry { name: name.to_string(), value, grad });
        let slot = self.entries.len() - 1;
        self.index.insert(name.to_string(), slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].name
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.entries[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.entries[slot].value
    }

    pub fn grad(&self, slot: usize) -> &Tensor {
        &self.entries[slot].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Accumulate (slot, gradient) pairs from `Tape::backward`.
    pub fn accumulate(&mut self, pairs: &[(usize, Tensor)]) {
        for (slot, g) in pairs {
            let grad = &mut self.entries[*slot].grad;
            debug_assert_eq!(grad.shape(), g.shape());
            for (dst, src) in grad.data.iter_mut().zip(&g.data) {
                *dst += src;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Plain SGD: value -= lr * grad, with optional global norm clipping.
    pub fn sgd_step(&mut self, lr: f64, clip_norm: Option<f64>) {
        let mut scale = 1.0;
        if let Some(max) = clip_norm {
            let norm = self.grad_norm();
            if norm > max {
                scale = max / norm;
            }
        }
        for e in &mut self.entries {
            for (v, g) in e.value.data.iter_mut().zip(&e.grad.data) {
                *v -= lr * scale * g;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }

    pub fn iter_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// Write a checkpoint. Values are stored as little-endian f64 bits.
pub fn save_checkpoint(vault: &ParamVault, path: &Path) -> Result<(), NetError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(vault.len() as u64).to_le_bytes())?;
        for i in 0..vault.len() {
            let name = vault.name(i).as_bytes();
            let t = vault.value(i);
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint into a fresh vault, preserving declaration order.
pub fn load_checkpoint(path: &Path) -> Result<ParamVault, NetError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic header".into()));
    }
    let count = read_u64(&mut r)? as usize;
    let mut vault = ParamVault::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NetError::Checkpoint("non-utf8 parameter name".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        vault.add(&name, Tensor::from_vec(rows, cols, data));
    }
    Ok(vault)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NetError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
