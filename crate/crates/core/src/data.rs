//! Dataset containers shared by the models.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A collection of exchangeable observations that can be subset by index.
pub trait Dataset: Sized {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New dataset holding the listed observations in the listed order.
    fn subset(&self, indices: &[usize]) -> Self;
}

/// Dense `n × d` real observations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    dim: usize,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("observation dimension must be >= 1"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::domain("value count is not a multiple of the dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations must be finite"));
        }
        Ok(Self { dim, values })
    }

    /// One-dimensional observations.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::domain("ragged rows"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-dimension empirical mean and (population) variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mut mean = alloc::vec![0.0; self.dim];
        for r in self.rows() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; self.dim];
        for r in self.rows() {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        (mean, var)
    }
}

impl Dataset for Observations {
    fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    fn subset(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            values,
        }
    }
}

/// Splits off `round(fraction · n)` randomly chosen observations as a
/// held-out set. Returns `None` for the held-out part when the fraction
/// rounds to zero points.
pub fn split_heldout<D: Dataset>(data: &D, fraction: f64, seed: u64) -> Result<(D, Option<D>)> {
    let (train, held) = split_indices(data.len(), fraction, seed)?;
    let held = (!held.is_empty()).then(|| data.subset(&held));
    Ok((data.subset(&train), held))
}

/// Sorted (train, held-out) index sets behind [`split_heldout`].
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::config("heldout_fraction", "must lie in [0, 0.5]"));
    }
    let n_held = libm::round(fraction * n as f64) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    if n_held == 0 {
        return Ok((idx, Vec::new()));
    }
    // Distinct stream from the initialization RNG of the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed4_e1d0_u64);
    idx.shuffle(&mut rng);
    let (held, train) = idx.split_at(n_held);
    let mut held = held.to_vec();
    let mut train = train.to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Ok((train, held))
}
