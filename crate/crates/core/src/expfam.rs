//! Exponential-family building blocks: special functions, moments, and the
//! [`ExpFamParam`] factor type shared by every model.
//!
//! Factors are stored in their canonical parameterization (mean/variance,
//! shape/rate, concentrations, probabilities). Natural parameters, log
//! normalizers, expected sufficient statistics and entropies are computed on
//! demand from the canonical form.

use alloc::vec::Vec;

use crate::mathf::{self, LN_2PI};
use crate::{Error, Result};

/// Returns `max + ln Σ exp(x_i − max)`.
///
/// `-inf` entries are allowed and contribute nothing; if every entry is
/// `-inf` the result is `-inf`. Empty input, NaN and `+inf` are domain errors.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty sequence"));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::domain("log_sum_exp input contains NaN or +inf"));
    }
    Ok(lse(values))
}

#[inline]
pub(crate) fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| mathf::exp(v - max)).sum();
    max + mathf::ln(sum)
}

/// Turns unnormalized log weights into probabilities in place and returns the
/// log normalizer.
#[inline]
pub(crate) fn normalize_log_weights(weights: &mut [f64]) -> f64 {
    let norm = lse(weights);
    for w in weights.iter_mut() {
        *w = mathf::exp(*w - norm);
    }
    norm
}

/// Digamma function Ψ(x) for x > 0.
///
/// Upward recurrence Ψ(x) = Ψ(x + 1) − 1/x until x ≥ 6, then the asymptotic
/// expansion in 1/x².
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("digamma requires a finite positive argument"));
    }
    Ok(psi(x))
}

#[inline]
pub(crate) fn psi(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_2k / 2k for k = 1..7.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + mathf::ln(x) - 0.5 * inv - series
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    mathf::lgamma(x)
}

/// E[μ] and E[μ²] under N(m, s2).
pub fn gaussian_moments(m: f64, s2: f64) -> Result<(f64, f64)> {
    check_positive(s2, "Gaussian variance")?;
    Ok((m, m * m + s2))
}

/// E[τ] and E[ln τ] under Gamma(shape a, rate b).
pub fn gamma_moments(a: f64, b: f64) -> Result<(f64, f64)> {
    check_positive(a, "Gamma shape")?;
    check_positive(b, "Gamma rate")?;
    Ok((a / b, psi(a) - mathf::ln(b)))
}

/// E[ln θ_k] = Ψ(γ_k) − Ψ(Σ_j γ_j) under Dirichlet(γ).
pub fn dirichlet_expected_log(gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() < 2 {
        return Err(Error::domain("Dirichlet needs at least two concentrations"));
    }
    for &g in gamma {
        check_positive(g, "Dirichlet concentration")?;
    }
    Ok(dirichlet_elog_unchecked(gamma))
}

pub(crate) fn dirichlet_elog_unchecked(gamma: &[f64]) -> Vec<f64> {
    let total = psi(gamma.iter().sum());
    gamma.iter().map(|&g| psi(g) - total).collect()
}

/// KL(N(q_m, q_s2) ‖ N(p_m, p_s2)).
pub fn gaussian_kl(q_m: f64, q_s2: f64, p_m: f64, p_s2: f64) -> Result<f64> {
    check_positive(q_s2, "Gaussian variance")?;
    check_positive(p_s2, "Gaussian variance")?;
    let d = p_m - q_m;
    let kl = 0.5 * (q_s2 / p_s2 + d * d / p_s2 - 1.0 + mathf::ln(p_s2 / q_s2));
    Ok(kl.max(0.0))
}

fn check_positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(alloc::format!("{what} must be finite and > 0, got {v}")))
    }
}

/// Exponential families available as variational factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Univariate normal, parameters `[mean, variance]`.
    Gaussian,
    /// Gamma, parameters `[shape, rate]`.
    Gamma,
    /// Dirichlet, parameters are the concentrations.
    Dirichlet,
    /// Categorical, parameters are the probabilities.
    Categorical,
    /// Normal-gamma over (μ, τ) with μ | τ ~ N(m, 1/(bτ)) and τ ~ Gamma(α, β);
    /// parameters `[m, b, α, β]`.
    NormalGamma,
}

/// One exponential-family density in canonical parameterization.
///
/// Construction validates the family's constraints, so every value of this
/// type is a proper density.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFamParam {
    family: Family,
    params: Vec<f64>,
}

const CATEGORICAL_SUM_TOL: f64 = 1e-12;

impl ExpFamParam {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        Self::new(Family::Gaussian, alloc::vec![mean, var])
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(Family::Gamma, alloc::vec![shape, rate])
    }

    pub fn dirichlet(concentrations: Vec<f64>) -> Result<Self> {
        Self::new(Family::Dirichlet, concentrations)
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        Self::new(Family::Categorical, probs)
    }

    pub fn normal_gamma(mean: f64, scale: f64, shape: f64, rate: f64) -> Result<Self> {
        Self::new(Family::NormalGamma, alloc::vec![mean, scale, shape, rate])
    }

    /// Uniform categorical over `k` outcomes.
    pub fn uniform_categorical(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("categorical needs at least one outcome"));
        }
        Ok(Self {
            family: Family::Categorical,
            params: alloc::vec![1.0 / k as f64; k],
        })
    }

    /// Validates and wraps canonical parameters.
    pub fn new(family: Family, params: Vec<f64>) -> Result<Self> {
        validate(family, &params)?;
        Ok(Self { family, params })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Same family with new canonical parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::domain("parameter length changed"));
        }
        Self::new(self.family, params)
    }

    /// Natural parameters η in the family's standard sufficient-statistic
    /// coordinates:
    ///
    /// | family | T(z) | η |
    /// |---|---|---|
    /// | Gaussian | [x, x²] | [m/s², −1/(2s²)] |
    /// | Gamma | [ln x, x] | [a − 1, −b] |
    /// | Dirichlet | ln x_k | γ_k − 1 |
    /// | Categorical | indicator | ln φ_k |
    /// | NormalGamma | [τμ, τμ², ln τ, τ] | [bm, −b/2, α − ½, −β − bm²/2] |
    pub fn natural_params(&self) -> Vec<f64> {
        let p = &self.params;
        match self.family {
            Family::Gaussian => alloc::vec![p[0] / p[1], -0.5 / p[1]],
            Family::Gamma => alloc::vec![p[0] - 1.0, -p[1]],
            Family::Dirichlet => p.iter().map(|g| g - 1.0).collect(),
            Family::Categorical => p.iter().map(|&q| mathf::ln(q)).collect(),
            Family::NormalGamma => {
                let (m, b, a, r) = (p[0], p[1], p[2], p[3]);
                alloc::vec![b * m, -0.5 * b, a - 0.5, -r - 0.5 * b * m * m]
            }
        }
    }

    /// Inverse of [`natural_params`](Self::natural_params). Categorical
    /// natural parameters may be unnormalized log weights.
    pub fn from_natural(family: Family, eta: &[f64]) -> Result<Self> {
        if eta.iter().any(|v| v.is_nan()) {
            return Err(Error::non_finite("natural parameter"));
        }
        let params = match family {
            Family::Gaussian => {
                expect_len(eta, 2)?;
                let var = -0.5 / eta[1];
                alloc::vec![eta[0] * var, var]
            }
            Family::Gamma => {
                expect_len(eta, 2)?;
                alloc::vec![eta[0] + 1.0, -eta[1]]
            }
            Family::Dirichlet => eta.iter().map(|e| e + 1.0).collect(),
            Family::Categorical => {
                let mut w = eta.to_vec();
                if w.is_empty() {
                    return Err(Error::domain("categorical needs at least one outcome"));
                }
                normalize_log_weights(&mut w);
                w
            }
            Family::NormalGamma => {
                expect_len(eta, 4)?;
                let b = -2.0 * eta[1];
                let m = eta[0] / b;
                alloc::vec![m, b, eta[2] + 0.5, -eta[3] - 0.5 * b * m * m]
            }
        };
        Self::new(family, params)
    }

    /// Log normalizer A(η).
    pub fn log_normalizer(&self) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Gaussian => 0.5 * p[0] * p[0] / p[1] + 0.5 * mathf::ln(p[1]),
            Family::Gamma => mathf::lgamma(p[0]) - p[0] * mathf::ln(p[1]),
            Family::Dirichlet => {
                p.iter().map(|&g| mathf::lgamma(g)).sum::<f64>() - mathf::lgamma(p.iter().sum())
            }
            Family::Categorical => 0.0,
            Family::NormalGamma => {
                mathf::lgamma(p[2]) - p[2] * mathf::ln(p[3]) - 0.5 * mathf::ln(p[1])
            }
        }
    }

    /// E[T(z)] in the coordinates of [`natural_params`](Self::natural_params).
    pub fn expected_suff_stats(&self) -> Vec<f64> {
        let p = &self.params;
        match self.family {
            Family::Gaussian => alloc::vec![p[0], p[0] * p[0] + p[1]],
            Family::Gamma => alloc::vec![psi(p[0]) - mathf::ln(p[1]), p[0] / p[1]],
            Family::Dirichlet => dirichlet_elog_unchecked(p),
            Family::Categorical => p.clone(),
            Family::NormalGamma => {
                let (m, b, a, r) = (p[0], p[1], p[2], p[3]);
                let e_tau = a / r;
                alloc::vec![m * e_tau, m * m * e_tau + 1.0 / b, psi(a) - mathf::ln(r), e_tau]
            }
        }
    }

    /// E[ln h(z)] for the base measure h.
    fn expected_log_base(&self) -> f64 {
        match self.family {
            Family::Gaussian | Family::NormalGamma => -0.5 * LN_2PI,
            Family::Gamma | Family::Dirichlet | Family::Categorical => 0.0,
        }
    }

    /// Differential (or Shannon, for categorical) entropy, computed as
    /// A(η) − ηᵀE[T] − E[ln h].
    pub fn entropy(&self) -> f64 {
        if self.family == Family::Categorical {
            return -self
                .params
                .iter()
                .filter(|&&q| q > 0.0)
                .map(|&q| q * mathf::ln(q))
                .sum::<f64>();
        }
        let eta = self.natural_params();
        let et = self.expected_suff_stats();
        self.log_normalizer() - dot(&eta, &et) - self.expected_log_base()
    }

    /// E_q[ln p(z)] where `self` is p and `q` is a factor of the same family
    /// and dimension.
    pub fn expected_log_density(&self, q: &ExpFamParam) -> Result<f64> {
        if q.family != self.family || q.params.len() != self.params.len() {
            return Err(Error::domain("expected_log_density across families"));
        }
        if self.family == Family::Categorical {
            let mut acc = 0.0;
            for (&qk, &pk) in q.params.iter().zip(&self.params) {
                if qk > 0.0 {
                    acc += qk * mathf::ln(pk);
                }
            }
            return Ok(acc);
        }
        let eta = self.natural_params();
        let et = q.expected_suff_stats();
        Ok(dot(&eta, &et) - self.log_normalizer() + q.expected_log_base())
    }

    /// KL(self ‖ other).
    pub fn kl_to(&self, other: &ExpFamParam) -> Result<f64> {
        let cross = other.expected_log_density(self)?;
        Ok(-self.entropy() - cross)
    }

    /// Copy with canonical parameter `idx` shifted by `delta`. Categorical
    /// rows are renormalized after the shift. Returns `None` when the shifted
    /// parameters are invalid.
    pub fn perturbed(&self, idx: usize, delta: f64) -> Option<Self> {
        let mut params = self.params.clone();
        *params.get_mut(idx)? += delta;
        if self.family == Family::Categorical {
            if params[idx] < 0.0 {
                return None;
            }
            let total: f64 = params.iter().sum();
            params.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(self.family, params).ok()
    }
}

fn expect_len(eta: &[f64], n: usize) -> Result<()> {
    if eta.len() == n {
        Ok(())
    } else {
        Err(Error::domain("wrong natural parameter length"))
    }
}

fn validate(family: Family, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("factor parameter"));
    }
    match family {
        Family::Gaussian => {
            expect_len(p, 2)?;
            check_positive(p[1], "Gaussian variance")
        }
        Family::Gamma => {
            expect_len(p, 2)?;
            check_positive(p[0], "Gamma shape")?;
            check_positive(p[1], "Gamma rate")
        }
        Family::Dirichlet => {
            if p.len() < 2 {
                return Err(Error::domain("Dirichlet needs at least two concentrations"));
            }
            p.iter()
                .try_for_each(|&g| check_positive(g, "Dirichlet concentration"))
        }
        Family::Categorical => {
            if p.is_empty() {
                return Err(Error::domain("categorical needs at least one outcome"));
            }
            if p.iter().any(|&q| q < 0.0) {
                return Err(Error::domain("negative categorical probability"));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > CATEGORICAL_SUM_TOL {
                return Err(Error::Domain(alloc::format!(
                    "categorical probabilities sum to {total}"
                )));
            }
            Ok(())
        }
        Family::NormalGamma => {
            expect_len(p, 4)?;
            check_positive(p[1], "normal-gamma scale")?;
            check_positive(p[2], "normal-gamma shape")?;
            check_positive(p[3], "normal-gamma rate")
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    // Ψ(n) = −γ + Σ_{j<n} 1/j; Ψ(n + ½) = −γ − 2 ln 2 + Σ_{j≤n} 2/(2j − 1).
    fn psi_integer(n: u32) -> f64 {
        -EULER_GAMMA + (1..n).map(|j| 1.0 / j as f64).sum::<f64>()
    }

    fn psi_half_integer(n: u32) -> f64 {
        -EULER_GAMMA - 2.0 * core::f64::consts::LN_2
            + (1..=n).map(|j| 2.0 / (2 * j - 1) as f64).sum::<f64>()
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[-3.5]).unwrap(), -3.5);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_errors() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Domain(_))));
        assert!(matches!(log_sum_exp(&[1.0, f64::NAN]), Err(Error::Domain(_))));
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap(),
            0.0,
            "-inf entries carry zero weight"
        );
    }

    #[test]
    fn digamma_reference_values() {
        assert!((digamma(1.0).unwrap() - (-0.577_215_664_9)).abs() < 1e-10);
        assert!((digamma(2.0).unwrap() - 0.422_784_335_1).abs() < 1e-10);
        assert!((digamma(0.5).unwrap() - (-1.963_510_026_0)).abs() < 1e-10);
        for n in 1..40 {
            assert!((psi(n as f64) - psi_integer(n)).abs() < 1e-12, "n = {n}");
            let x = n as f64 + 0.5;
            assert!((psi(x) - psi_half_integer(n)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn digamma_extremes() {
        // Ψ(x) = −1/x − γ + (π²/6) x + O(x²) near zero.
        let x = 1e-6;
        let series = -1.0 / x - EULER_GAMMA + core::f64::consts::PI.powi(2) / 6.0 * x;
        assert!((digamma(x).unwrap() - series).abs() < 1e-10);
        // Ψ(x) = ln x − 1/(2x) − 1/(12x²) + O(x⁻⁴) at large x.
        let x: f64 = 1e6;
        let asym = x.ln() - 0.5 / x - 1.0 / (12.0 * x * x);
        assert!((digamma(x).unwrap() - asym).abs() < 1e-12);
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
    }

    #[test]
    fn digamma_recurrence() {
        for x in [0.5, 1.0, 2.0, 10.0, 100.0] {
            let diff = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((diff - 1.0 / x).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn moment_examples() {
        assert_eq!(gaussian_moments(0.0, 1.0).unwrap(), (0.0, 1.0));
        assert_eq!(gaussian_moments(2.0, 0.25).unwrap(), (2.0, 4.25));
        assert_eq!(gaussian_moments(-1.0, 1.0).unwrap(), (-1.0, 2.0));
        assert!(gaussian_moments(0.0, 0.0).is_err());

        let (e, el) = gamma_moments(1.0, 1.0).unwrap();
        assert_eq!(e, 1.0);
        assert!((el + 0.577_215_664_9).abs() < 1e-10);
        let (e, el) = gamma_moments(2.0, 4.0).unwrap();
        assert_eq!(e, 0.5);
        assert!((el - (psi_integer(2) - 4f64.ln())).abs() < 1e-12);
        assert_eq!(gamma_moments(3.7, 3.7).unwrap().0, 1.0);
        assert!(gamma_moments(0.0, 1.0).is_err());
        assert!(gamma_moments(1.0, -1.0).is_err());
    }

    #[test]
    fn dirichlet_expected_log_examples() {
        let e = dirichlet_expected_log(&[1.0, 1.0]).unwrap();
        assert!(e.iter().all(|v| (v + 1.0).abs() < 1e-12));
        let e = dirichlet_expected_log(&[2.0, 2.0]).unwrap();
        let expected = -(1.0 / 2.0 + 1.0 / 3.0);
        assert!(e.iter().all(|v| (v - expected).abs() < 1e-12));
        let e = dirichlet_expected_log(&[0.3; 7]).unwrap();
        assert!(e.iter().all(|v| *v == e[0]));
        assert!(dirichlet_expected_log(&[1.0, 0.0]).is_err());
        assert!(dirichlet_expected_log(&[1.0]).is_err());
    }

    #[test]
    fn gaussian_kl_examples() {
        assert_eq!(gaussian_kl(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
        assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let kl = gaussian_kl(0.0, 0.5, 0.0, 1.0).unwrap();
        assert!((kl - 0.5 * (0.5 - 1.0 + 2f64.ln())).abs() < 1e-15);
        assert!((kl - 0.096_574).abs() < 1e-6);
        assert!(gaussian_kl(0.0, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn factor_validation() {
        assert!(ExpFamParam::gaussian(0.0, 0.0).is_err());
        assert!(ExpFamParam::gamma(1.0, 0.0).is_err());
        assert!(ExpFamParam::dirichlet(alloc::vec![1.0, -1.0]).is_err());
        assert!(ExpFamParam::categorical(alloc::vec![0.5, 0.6]).is_err());
        assert!(ExpFamParam::categorical(alloc::vec![0.5, 0.5]).is_ok());
        assert!(ExpFamParam::normal_gamma(0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn entropy_matches_closed_forms() {
        let g = ExpFamParam::gaussian(1.3, 0.7).unwrap();
        let closed = 0.5 * (2.0 * core::f64::consts::PI * core::f64::consts::E * 0.7).ln();
        assert!((g.entropy() - closed).abs() < 1e-12);

        let (a, b) = (2.5f64, 1.7f64);
        let gam = ExpFamParam::gamma(a, b).unwrap();
        let closed = a - b.ln() + ln_gamma(a) + (1.0 - a) * psi(a);
        assert!((gam.entropy() - closed).abs() < 1e-12);

        let c = ExpFamParam::categorical(alloc::vec![0.25; 4]).unwrap();
        assert!((c.entropy() - 4f64.ln()).abs() < 1e-15);

        // Dirichlet: ln B(γ) + (γ0 − K)Ψ(γ0) − Σ(γ_k − 1)Ψ(γ_k).
        let gam = [0.5, 2.0, 3.5];
        let g0: f64 = gam.iter().sum();
        let ln_b: f64 = gam.iter().map(|&g| ln_gamma(g)).sum::<f64>() - ln_gamma(g0);
        let closed = ln_b + (g0 - 3.0) * psi(g0)
            - gam.iter().map(|&g| (g - 1.0) * psi(g)).sum::<f64>();
        let d = ExpFamParam::dirichlet(gam.to_vec()).unwrap();
        assert!((d.entropy() - closed).abs() < 1e-12);

        // Normal-gamma: H(τ) + E_τ[H(N(m, 1/(bτ)))].
        let (m, bs, al, be) = (0.4f64, 2.0f64, 3.0f64, 1.5f64);
        let ng = ExpFamParam::normal_gamma(m, bs, al, be).unwrap();
        let h_tau = al - be.ln() + ln_gamma(al) + (1.0 - al) * psi(al);
        let e_ln_tau = psi(al) - be.ln();
        let h_mu = 0.5 * (1.0 + LN_2PI) - 0.5 * bs.ln() - 0.5 * e_ln_tau;
        assert!((ng.entropy() - (h_tau + h_mu)).abs() < 1e-12);
    }

    #[test]
    fn self_kl_is_zero_and_gaussian_kl_agrees() {
        let q = ExpFamParam::gaussian(0.2, 0.5).unwrap();
        let p = ExpFamParam::gaussian(-1.0, 2.0).unwrap();
        assert!(q.kl_to(&q).unwrap().abs() < 1e-12);
        let closed = gaussian_kl(0.2, 0.5, -1.0, 2.0).unwrap();
        assert!((q.kl_to(&p).unwrap() - closed).abs() < 1e-12);
        let ng = ExpFamParam::normal_gamma(1.0, 2.0, 3.0, 4.0).unwrap();
        assert!(ng.kl_to(&ng).unwrap().abs() < 1e-12);
    }

    #[test]
    fn perturbation_keeps_categorical_normalized() {
        let c = ExpFamParam::categorical(alloc::vec![0.2, 0.8]).unwrap();
        let p = c.perturbed(0, 1e-3).unwrap();
        assert!((p.params().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ExpFamParam::gaussian(0.0, 1e-4).unwrap().perturbed(1, -1e-3).is_none());
    }

    fn any_factor() -> impl Strategy<Value = ExpFamParam> {
        prop_oneof![
            (-5.0..5.0f64, 0.05..5.0f64).prop_map(|(m, v)| ExpFamParam::gaussian(m, v).unwrap()),
            (0.1..10.0f64, 0.1..10.0f64).prop_map(|(a, b)| ExpFamParam::gamma(a, b).unwrap()),
            proptest::collection::vec(0.1..10.0f64, 2..6)
                .prop_map(|g| ExpFamParam::dirichlet(g).unwrap()),
            proptest::collection::vec(-4.0..4.0f64, 1..6).prop_map(|w| {
                ExpFamParam::from_natural(Family::Categorical, &w).unwrap()
            }),
            (-3.0..3.0f64, 0.1..5.0f64, 0.6..8.0f64, 0.1..8.0f64)
                .prop_map(|(m, b, a, r)| ExpFamParam::normal_gamma(m, b, a, r).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn log_sum_exp_shift_invariance(
            v in proptest::collection::vec(-50.0..50.0f64, 1..20),
            c in -500.0..500.0f64,
        ) {
            let base = log_sum_exp(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let s = log_sum_exp(&shifted).unwrap();
            prop_assert!((s - (base + c)).abs() <= 1e-12 * (1.0 + (base + c).abs()));
        }

        #[test]
        fn gaussian_kl_nonnegative(
            qm in -10.0..10.0f64, qv in 1e-3..10.0f64,
            pm in -10.0..10.0f64, pv in 1e-3..10.0f64,
        ) {
            let kl = gaussian_kl(qm, qv, pm, pv).unwrap();
            prop_assert!(kl >= 0.0);
            if (qm - pm).abs() > 1e-3 || (qv - pv).abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }

        #[test]
        fn dirichlet_jensen_gap(g in proptest::collection::vec(1e-2..50.0f64, 2..10)) {
            let e = dirichlet_expected_log(&g).unwrap();
            let total: f64 = e.iter().map(|v| v.exp()).sum();
            prop_assert!(e.iter().all(|v| *v < 0.0));
            prop_assert!(total < 1.0);
        }

        #[test]
        fn natural_round_trip(f in any_factor()) {
            let back = ExpFamParam::from_natural(f.family(), &f.natural_params()).unwrap();
            for (a, b) in f.params().iter().zip(back.params()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn kl_between_factors_nonnegative(f in any_factor(), g in any_factor()) {
            if f.family() == g.family() && f.params().len() == g.params().len() {
                prop_assert!(f.kl_to(&g).unwrap() >= -1e-10);
            }
        }
    }
}
