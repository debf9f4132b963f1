//! Small dense symmetric positive-definite helpers (row-major storage).

use alloc::vec;
use alloc::vec::Vec;

use crate::mathf;
use crate::{Error, Result};

/// Lower-triangular Cholesky factor L with A = L Lᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factors a symmetric `dim × dim` matrix. Only the lower triangle is read.
    pub fn new(a: &[f64], dim: usize) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::domain("matrix size does not match dimension"));
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = a[i * dim + j];
                for k in 0..j {
                    sum -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[i * dim + i] = mathf::sqrt(sum);
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        Ok(Self { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[i * n + k] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l[k * n + i] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        y
    }

    /// ln det A.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| 2.0 * mathf::ln(self.lower[i * self.dim + i]))
            .sum()
    }

    /// Diagonal of A⁻¹, read from L⁻¹ without forming the full inverse.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim;
        let l = &self.lower;
        // Columns of L⁻¹ by forward substitution; [A⁻¹]_jj = Σ_i (L⁻¹)_ij².
        let mut diag = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0 / l[j * n + j];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[i * n + k] * col[k];
                }
                col[i] = s / l[i * n + i];
            }
            // col = L⁻¹ e_j and A⁻¹ = L⁻ᵀ L⁻¹, so [A⁻¹]_jj = ‖col‖².
            diag[j] = col[j..].iter().map(|c| c * c).sum();
        }
        diag
    }

    /// tr(A⁻¹ B) for symmetric B.
    pub fn trace_inverse_times(&self, b: &[f64]) -> f64 {
        let n = self.dim;
        let mut tr = 0.0;
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b[i * n + j];
            }
            let x = self.solve(&col);
            tr += x[j];
        }
        tr
    }
}
