//! Named parameter tensors, gradient buffers and plain gradient descent.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Row-major matrix; vectors are stored as `rows x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Fan,
    Zeros,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    inits: Vec<Init>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter {name}");
        let id = ParamId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.tensors.push(Tensor::zeros(rows, cols));
        self.inits.push(init);
        id
    }

    pub fn initialize<R: Rng>(&mut self, rng: &mut R) {
        for (t, init) in self.tensors.iter_mut().zip(&self.inits) {
            match init {
                Init::Zeros => t.data.iter_mut().for_each(|v| *v = 0.0),
                Init::Fan => {
                    let limit = math::sqrt(6.0 / (t.rows + t.cols).max(1) as f64);
                    for v in t.data.iter_mut() {
                        *v = rng.random_range(-limit..=limit);
                    }
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(|i| ParamId(i as u32))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index()]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i as u32), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a tensor's values, checking the shape.
    pub fn set(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let t = &mut self.tensors[id.index()];
        if t.rows != rows || t.cols != cols || values.len() != rows * cols {
            return Err(Error::ShapeMismatch { name: name.to_string(), expected: (t.rows, t.cols), actual: (rows, cols) });
        }
        t.data.copy_from_slice(values);
        Ok(())
    }

    /// FNV-1a hash over names and value bits of the parameters selected by `keep`.
    pub fn fingerprint(&self, keep: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (_, name, t) in self.iter() {
            if !keep(name) {
                continue;
            }
            eat(name.as_bytes());
            eat(&(t.rows as u64).to_le_bytes());
            eat(&(t.cols as u64).to_le_bytes());
            for v in &t.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// `theta -= lr * grad` for every parameter selected by `trainable`.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64, trainable: &[bool]) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            for (v, g) in t.data.iter_mut().zip(&grads.data[i]) {
                *v -= lr * g;
            }
        }
    }

    pub fn mask(&self, keep: impl Fn(&str) -> bool) -> Vec<bool> {
        self.names.iter().map(|n| keep(n)).collect()
    }
}

/// Parameter-shaped gradient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { data: store.tensors.iter().map(|t| alloc::vec![0.0; t.len()]).collect() }
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.index()]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = math::sqrt(self.data.iter().flatten().map(|v| v * v).sum::<f64>());
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn check_finite(&self, store: &ParamStore) -> Result<()> {
        for (i, g) in self.data.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(store.names[i].clone()));
            }
        }
        Ok(())
    }
}
