//! Mean-field approximation of a correlated bivariate Gaussian.
//!
//! The optimal factorized approximation keeps the target means but uses the
//! conditional variances 1/Λ_jj, which understate the marginal variances
//! whenever the coordinates are correlated.

use alloc::vec::Vec;

use super::{CaviModel, InitStrategy, MeanFieldState};
use crate::data::Dataset;
use crate::expfam::ExpFamParam;
use crate::mathf::{self, LN_2PI};
use crate::{Error, Result};

/// Placeholder dataset for targets that carry no observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoData;

impl Dataset for NoData {
    fn len(&self) -> usize {
        0
    }

    fn subset(&self, _indices: &[usize]) -> Self {
        NoData
    }
}

fn check_spd(cov: &[[f64; 2]; 2]) -> Result<f64> {
    let [[a, b], [c, d]] = *cov;
    let scale = a.abs().max(d.abs()).max(1.0);
    if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
        return Err(Error::domain("covariance entries must be finite"));
    }
    if (b - c).abs() > 1e-12 * scale {
        return Err(Error::domain("covariance must be symmetric"));
    }
    let det = a * d - b * c;
    if !(a > 0.0) || !(det > 0.0) {
        return Err(Error::domain("covariance must be positive definite"));
    }
    Ok(det)
}

/// Closed-form optimal mean-field factors for N(mean, cov): the factor means
/// equal the target means and the factor variances are 1/Λ_jj with
/// Λ = cov⁻¹.
pub fn meanfield_gaussian_fixed_point(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
) -> Result<([f64; 2], [f64; 2])> {
    let det = check_spd(&cov)?;
    // Λ_11 = Σ_22 / det, Λ_22 = Σ_11 / det.
    Ok((mean, [det / cov[1][1], det / cov[0][0]]))
}

/// Points on the `k`-standard-deviation contour of N(mean, cov).
pub fn gaussian_contour(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    k: f64,
    n_points: usize,
) -> Result<Vec<[f64; 2]>> {
    check_spd(&cov)?;
    let l11 = mathf::sqrt(cov[0][0]);
    let l21 = cov[1][0] / l11;
    let l22 = mathf::sqrt(cov[1][1] - l21 * l21);
    Ok((0..n_points)
        .map(|i| {
            let t = 2.0 * core::f64::consts::PI * i as f64 / n_points as f64;
            let (u, v) = (k * mathf::cos(t), k * mathf::sin(t));
            [mean[0] + l11 * u, mean[1] + l21 * u + l22 * v]
        })
        .collect())
}

/// A bivariate Gaussian target fit by generic coordinate ascent, for
/// checking the closed form above.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateGaussianTarget {
    mean: [f64; 2],
    precision: [[f64; 2]; 2],
    log_det_cov: f64,
}

impl BivariateGaussianTarget {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = check_spd(&cov)?;
        let precision = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Ok(Self {
            mean,
            precision,
            log_det_cov: mathf::ln(det),
        })
    }

    fn factor(state: &MeanFieldState, j: usize) -> (f64, f64) {
        let p = state.factor(j).params();
        (p[0], p[1])
    }
}

impl CaviModel for BivariateGaussianTarget {
    type Data = NoData;
    type State = MeanFieldState;

    fn init_state(&self, _data: &NoData, strategy: InitStrategy, seed: u64) -> Result<MeanFieldState> {
        let mut s = MeanFieldState::new();
        let offset = match strategy {
            InitStrategy::Prior => 0.0,
            InitStrategy::DataCalibrated => (seed % 7) as f64 - 3.0,
        };
        s.push("z1", ExpFamParam::gaussian(offset, 1.0)?);
        s.push("z2", ExpFamParam::gaussian(-offset, 1.0)?);
        Ok(s)
    }

    fn sweep(&self, state: &mut MeanFieldState, _data: &NoData) -> Result<()> {
        // q*(z_j) ∝ exp E_{-j}[ln p(z)] = N(μ_j − (Λ_jk/Λ_jj)(E z_k − μ_k), 1/Λ_jj).
        for j in 0..2 {
            let k = 1 - j;
            let (mk, _) = Self::factor(state, k);
            let lam_jj = self.precision[j][j];
            let m = self.mean[j] - self.precision[j][k] / lam_jj * (mk - self.mean[k]);
            state.set(j, ExpFamParam::gaussian(m, 1.0 / lam_jj)?)?;
        }
        Ok(())
    }

    fn elbo(&self, state: &MeanFieldState, _data: &NoData) -> Result<f64> {
        let (m1, v1) = Self::factor(state, 0);
        let (m2, v2) = Self::factor(state, 1);
        let d = [m1 - self.mean[0], m2 - self.mean[1]];
        let l = &self.precision;
        let quad = l[0][0] * (d[0] * d[0] + v1) + 2.0 * l[0][1] * d[0] * d[1] + l[1][1] * (d[1] * d[1] + v2);
        let expected_log_p = -LN_2PI - 0.5 * self.log_det_cov - 0.5 * quad;
        let entropy = state.factor(0).entropy() + state.factor(1).entropy();
        Ok(expected_log_p + entropy)
    }

    fn heldout_log_predictive(&self, _state: &MeanFieldState, _heldout: &NoData) -> Result<f64> {
        Err(Error::domain("the bivariate target has no observations"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let (m, v) = meanfield_gaussian_fixed_point([0.5, -1.0], [[2.0, 0.0], [0.0, 3.0]]).unwrap();
        assert_eq!(m, [0.5, -1.0]);
        assert_eq!(v, [2.0, 3.0]);
        let (_, v) = meanfield_gaussian_fixed_point([0.0, 0.0], [[1.0, 0.9], [0.9, 1.0]]).unwrap();
        assert!((v[0] - 0.19).abs() < 1e-15 && (v[1] - 0.19).abs() < 1e-15);
        assert!(meanfield_gaussian_fixed_point([0.0; 2], [[1.0, 1.0], [1.0, 1.0]]).is_err());
        assert!(meanfield_gaussian_fixed_point([0.0; 2], [[1.0, 0.1], [0.2, 1.0]]).is_err());
    }

    #[test]
    fn contour_is_on_the_ellipse() {
        let cov = [[2.0, 0.6], [0.6, 1.0]];
        let det = 2.0 - 0.36;
        for p in gaussian_contour([1.0, 2.0], cov, 2.0, 50).unwrap() {
            let (x, y) = (p[0] - 1.0, p[1] - 2.0);
            let mahal = (cov[1][1] * x * x - 2.0 * cov[0][1] * x * y + cov[0][0] * y * y) / det;
            assert!((mahal - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elbo_at_fixed_point_is_below_zero_gap() {
        // ln p(x) is 0 for a normalized target without data, so ELBO = −KL ≤ 0.
        let t = BivariateGaussianTarget::new([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let mut s = t.init_state(&NoData, InitStrategy::Prior, 0).unwrap();
        for _ in 0..200 {
            t.sweep(&mut s, &NoData).unwrap();
        }
        let elbo = t.elbo(&s, &NoData).unwrap();
        // KL(q‖p) = ½(ln det Σ − Σ ln v_j) at the optimum, since tr(ΛV) = 2.
        let (_, v) = meanfield_gaussian_fixed_point([0.0; 2], [[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let kl = 0.5 * (0.75f64.ln() - v[0].ln() - v[1].ln());
        assert!((elbo + kl).abs() < 1e-12);
    }
}
