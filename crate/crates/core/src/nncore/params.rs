use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// SplitMix64 finalizer, used to derive independent seeds from `(seed, name)`.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-stream RNG: the same `(seed, stream)` pair always yields the same sequence.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for b in stream.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Named model parameters, iterated in lexicographic order.
///
/// Every mutation bumps `version`, which lets a recorded tape detect that it
/// was built against different parameter values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        self.version += 1;
        Ok(())
    }

    /// Uniform Glorot initialization from the `(seed, name)` stream.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize, seed: u64) -> Result<()> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut rng = stream_rng(seed, name);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Matrix::zeros(rows, cols))
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        self.version += 1;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.version += 1;
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|m| m.data().len()).sum()
    }

    /// Zero-valued gradients with the same names and shapes.
    pub fn zeros_like(&self) -> Grads {
        Grads(
            self.params
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        )
    }
}

/// Gradients keyed by parameter name, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub(crate) BTreeMap<String, Matrix>);

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .values()
            .flat_map(|m| m.data().iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}
