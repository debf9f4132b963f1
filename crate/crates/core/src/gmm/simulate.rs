use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Observations;
use crate::mathf;
use crate::{Error, Result};

const MAX_MEAN_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub k: usize,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    /// True means are drawn from N(0, mean_std² I).
    pub mean_std: f64,
    /// Minimum pairwise distance between true means; 0 disables rejection.
    pub min_separation: f64,
    /// Round-robin labels instead of uniform draws.
    pub balanced: bool,
}

impl SimulationConfig {
    pub fn new(k: usize, n: usize, dim: usize, seed: u64) -> Self {
        Self {
            k,
            n,
            dim,
            seed,
            mean_std: 5.0,
            min_separation: 0.0,
            balanced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: Observations,
    /// `k × dim`, row-major.
    pub means: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Draws a unit-variance Gaussian mixture dataset. Deterministic per seed.
pub fn simulate(config: &SimulationConfig) -> Result<Simulation> {
    let SimulationConfig { k, n, dim, .. } = *config;
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if n == 0 {
        return Err(Error::config("n", "must be >= 1"));
    }
    if dim == 0 {
        return Err(Error::config("dim", "must be >= 1"));
    }
    if !(config.mean_std > 0.0) || !config.mean_std.is_finite() {
        return Err(Error::config("mean_std", "must be finite and > 0"));
    }
    if !(config.min_separation >= 0.0) {
        return Err(Error::config("min_separation", "must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut means: Vec<f64> = Vec::with_capacity(k * dim);
    let sep2 = config.min_separation * config.min_separation;
    for _ in 0..k {
        let mut accepted = false;
        for _ in 0..MAX_MEAN_DRAWS {
            let candidate: Vec<f64> = (0..dim).map(|_| config.mean_std * normal(&mut rng)).collect();
            let far_enough = means.chunks_exact(dim).all(|m| {
                m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= sep2
            });
            if far_enough {
                means.extend_from_slice(&candidate);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::config("min_separation", "too large to place every mean"));
        }
    }

    let labels: Vec<usize> = if config.balanced {
        (0..n).map(|i| i % k).collect()
    } else {
        (0..n).map(|_| rng.random_range(0..k)).collect()
    };
    let mut values = Vec::with_capacity(n * dim);
    for &c in &labels {
        for d in 0..dim {
            values.push(means[c * dim + d] + normal(&mut rng));
        }
    }
    Ok(Simulation {
        data: Observations::new(dim, values)?,
        means,
        labels,
    })
}

/// Fraction of points whose predicted label matches the truth under the best
/// one-to-one relabeling of the predicted clusters. Exact assignment by
/// dynamic programming over subsets, so `k` is limited to 20.
pub fn permutation_accuracy(truth: &[usize], predicted: &[usize], k: usize) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::domain("label vectors differ in length"));
    }
    if k == 0 || k > 20 {
        return Err(Error::domain("permutation accuracy supports 1 <= k <= 20"));
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let mut confusion = alloc::vec![0usize; k * k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::domain("label out of range"));
        }
        confusion[t * k + p] += 1;
    }
    // best[mask]: most matches with true labels 0..popcount(mask) mapped onto
    // the predicted labels in `mask`.
    let mut best = alloc::vec![0usize; 1 << k];
    for mask in 1usize..(1 << k) {
        let t = mask.count_ones() as usize - 1;
        let mut b = 0;
        let mut rest = mask;
        while rest != 0 {
            let p = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            b = b.max(best[mask & !(1 << p)] + confusion[t * k + p]);
        }
        best[mask] = b;
    }
    Ok(best[(1 << k) - 1] as f64 / truth.len() as f64)
}

/// Smallest pairwise distance between rows of a `k × dim` matrix.
pub fn min_pairwise_distance(means: &[f64], dim: usize) -> f64 {
    let rows: Vec<&[f64]> = means.chunks_exact(dim).collect();
    let mut best = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(mathf::sqrt(d2));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn deterministic_per_seed() {
        let c = SimulationConfig::new(5, 300, 2, 11);
        assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
        let other = SimulationConfig { seed: 12, ..c };
        assert_ne!(simulate(&c).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn desk_study_shape_and_separation() {
        let c = SimulationConfig {
            min_separation: 4.0,
            ..SimulationConfig::new(5, 1000, 2, 3)
        };
        let s = simulate(&c).unwrap();
        assert_eq!(s.data.len(), 1000);
        assert_eq!(s.data.dim(), 2);
        assert_eq!(s.means.len(), 10);
        assert!(min_pairwise_distance(&s.means, 2) >= 4.0);
        assert!(s.labels.iter().all(|&l| l < 5));
    }

    #[test]
    fn balanced_labels_cover_every_component() {
        let c = SimulationConfig {
            balanced: true,
            ..SimulationConfig::new(4, 4, 1, 0)
        };
        let mut labels = simulate(&c).unwrap().labels;
        labels.sort_unstable();
        assert_eq!(labels, [0, 1, 2, 3]);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(simulate(&SimulationConfig::new(0, 5, 1, 0)).is_err());
        assert!(simulate(&SimulationConfig::new(2, 0, 1, 0)).is_err());
        let impossible = SimulationConfig {
            min_separation: 1e6,
            ..SimulationConfig::new(3, 5, 1, 0)
        };
        assert!(simulate(&impossible).is_err());
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(permutation_accuracy(&truth, &[2, 2, 0, 0, 1, 1], 3).unwrap(), 1.0);
        assert!((permutation_accuracy(&truth, &[2, 2, 0, 1, 1, 1], 3).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // All points in one predicted cluster: only one true cluster can match.
        assert!((permutation_accuracy(&truth, &[1; 6], 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(permutation_accuracy(&truth, &[0; 5], 3).is_err());
    }
}
