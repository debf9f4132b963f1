//! Bayesian linear regression with automatic relevance determination.
//!
//! Generative model:
//! τ ~ Gamma(a0, b0), α_d ~ Gamma(c0, d0),
//! β | τ, α ~ N(0, (τ diag α)⁻¹), y_i | x_i, β, τ ~ N(x_iᵀβ, 1/τ).
//!
//! The variational family keeps β and τ together,
//! q(β, τ) = N(β; β*, V*/τ) Gamma(τ; a*, b*), with independent
//! q(α_d) = Gamma(c*, d*_d). Each CAVI sweep updates (β, τ) first and the
//! relevance factors second.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::condconj::SviSettings;
use crate::data::Dataset;
use crate::engine::{
    relative_change, CaviModel, Clock, FitConfig, FitReport, HeldoutPoint, InitStrategy, Perturb, TracePoint,
};
use crate::error::ensure_finite;
use crate::expfam::{psi, ExpFamParam};
use crate::linalg::Cholesky;
use crate::mathf::{self, LN_2PI};
use crate::{Error, Result};

/// Inputs `x` (`n × dim`, row-major) and responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl RegressionData {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("regression needs at least one input column"));
        }
        if x.len() != dim * y.len() {
            return Err(Error::domain("input matrix does not match the number of responses"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::domain("regression data must be finite"));
        }
        Ok(Self { dim, x, y })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy with input columns reordered: column `j` of the result is column
    /// `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = alloc::vec![false; self.dim];
        if perm.len() != self.dim || perm.iter().any(|&p| p >= self.dim || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::domain("not a permutation of the input columns"));
        }
        let x = (0..self.len())
            .flat_map(|i| perm.iter().map(move |&p| (i, p)))
            .map(|(i, p)| self.x[i * self.dim + p])
            .collect();
        Self::new(self.dim, x, self.y.clone())
    }

    fn gram(&self, scale: f64, rows: impl Iterator<Item = usize>) -> Sufficient {
        let d = self.dim;
        let mut s = Sufficient {
            xtx: alloc::vec![0.0; d * d],
            xty: alloc::vec![0.0; d],
            yty: 0.0,
        };
        for i in rows {
            let x = self.row(i);
            let y = self.y[i];
            for a in 0..d {
                s.xty[a] += scale * x[a] * y;
                for b in 0..=a {
                    s.xtx[a * d + b] += scale * x[a] * x[b];
                }
            }
            s.yty += scale * y * y;
        }
        for a in 0..d {
            for b in 0..a {
                s.xtx[b * d + a] = s.xtx[a * d + b];
            }
        }
        s
    }
}

impl Dataset for RegressionData {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        let x = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Self { dim: self.dim, x, y }
    }
}

/// XᵀX, Xᵀy and yᵀy.
struct Sufficient {
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlrArdConfig {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
}

impl Default for BlrArdConfig {
    /// Broad Gamma priors: shapes 1e-2, rates 1e-4.
    fn default() -> Self {
        Self {
            a0: 1e-2,
            b0: 1e-4,
            c0: 1e-2,
            d0: 1e-4,
        }
    }
}

impl BlrArdConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("a0", self.a0), ("b0", self.b0), ("c0", self.c0), ("d0", self.d0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlrArdState {
    dim: usize,
    /// V*⁻¹, `dim × dim` row-major.
    pub v_inv: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub a_star: f64,
    pub b_star: f64,
    pub c_star: f64,
    pub d_star: Vec<f64>,
}

impl BlrArdState {
    pub fn new(
        dim: usize,
        v_inv: Vec<f64>,
        beta_star: Vec<f64>,
        a_star: f64,
        b_star: f64,
        c_star: f64,
        d_star: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            dim,
            v_inv,
            beta_star,
            a_star,
            b_star,
            c_star,
            d_star,
        };
        s.validate()?;
        Ok(s)
    }

    /// The state before any data: V*⁻¹ = diag(c*/d*), β* = 0, (a*, b*) at the
    /// prior.
    pub fn from_relevance(dim: usize, config: &BlrArdConfig, c_star: f64, d_star: Vec<f64>) -> Result<Self> {
        let mut v_inv = alloc::vec![0.0; dim * dim];
        for (j, d) in d_star.iter().enumerate() {
            v_inv[j * dim + j] = c_star / d;
        }
        Self::new(dim, v_inv, alloc::vec![0.0; dim], config.a0, config.b0, c_star, d_star)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || self.v_inv.len() != d * d || self.beta_star.len() != d || self.d_star.len() != d {
            return Err(Error::domain("state shapes do not match the input dimension"));
        }
        if self.v_inv.iter().chain(&self.beta_star).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("coefficient factor"));
        }
        for (quantity, v) in [("a*", self.a_star), ("b*", self.b_star), ("c*", self.c_star)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    quantity,
                    value: v,
                    iteration: None,
                });
            }
        }
        if let Some(&v) = self.d_star.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter {
                quantity: "d*",
                value: v,
                iteration: None,
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(&self.v_inv, self.dim)
    }

    /// Diagonal of V*.
    pub fn v_star_diag(&self) -> Result<Vec<f64>> {
        Ok(self.cholesky()?.inverse_diagonal())
    }

    /// E[α_d] = c*/d*_d.
    pub fn e_alpha(&self) -> Vec<f64> {
        self.d_star.iter().map(|d| self.c_star / d).collect()
    }

    /// E[τ] = a*/b*.
    pub fn e_tau(&self) -> f64 {
        self.a_star / self.b_star
    }
}

/// (E[α_d], E[τ β_d²]) with E[τ β_d²] = β*_d² a*/b* + [V*]_dd.
pub fn blr_expectations(state: &BlrArdState) -> Result<(Vec<f64>, Vec<f64>)> {
    let v_diag = state.v_star_diag()?;
    let e_tau = state.e_tau();
    let e_tau_beta2 = state
        .beta_star
        .iter()
        .zip(&v_diag)
        .map(|(b, v)| b * b * e_tau + v)
        .collect();
    Ok((state.e_alpha(), e_tau_beta2))
}

fn set_coefficients(state: &mut BlrArdState, e_alpha: &[f64], s: &Sufficient, a_star: f64, b0: f64) -> Result<()> {
    let d = state.dim;
    let mut v_inv = s.xtx.clone();
    for j in 0..d {
        v_inv[j * d + j] += e_alpha[j];
    }
    let chol = Cholesky::new(&v_inv, d)?;
    let beta = chol.solve(&s.xty);
    let quad: f64 = beta.iter().zip(&s.xty).map(|(b, h)| b * h).sum();
    let b_star = b0 + 0.5 * (s.yty - quad);
    if !(b_star > 0.0) || !b_star.is_finite() {
        return Err(Error::InvalidParameter {
            quantity: "b*",
            value: b_star,
            iteration: None,
        });
    }
    state.v_inv = v_inv;
    state.beta_star = beta;
    state.a_star = a_star;
    state.b_star = b_star;
    Ok(())
}

/// V*⁻¹ = E[diag α] + XᵀX, β* = V* Xᵀy, a* = a0 + n/2,
/// b* = b0 + ½(yᵀy − β*ᵀV*⁻¹β*).
pub fn update_coeff_precision(state: &mut BlrArdState, data: &RegressionData, config: &BlrArdConfig) -> Result<()> {
    if data.dim() != state.dim {
        return Err(Error::domain("input dimension does not match the state"));
    }
    let s = data.gram(1.0, 0..data.len());
    let e_alpha = state.e_alpha();
    set_coefficients(state, &e_alpha, &s, config.a0 + 0.5 * data.len() as f64, config.b0)
}

/// c* = c0 + ½, d*_d = d0 + ½E[τ β_d²].
pub fn update_relevance(state: &mut BlrArdState, config: &BlrArdConfig) -> Result<()> {
    let (_, e_tau_beta2) = blr_expectations(state)?;
    state.c_star = config.c0 + 0.5;
    for (d, e) in state.d_star.iter_mut().zip(&e_tau_beta2) {
        *d = config.d0 + 0.5 * e;
        if !(*d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidParameter {
                quantity: "d*",
                value: *d,
                iteration: None,
            });
        }
    }
    Ok(())
}

/// Whether q(α) is learned or α is held at a known value.
#[derive(Debug, Clone, PartialEq)]
pub enum Relevance {
    Learned,
    /// α fixed at these values; the ELBO is then that of the model without
    /// relevance variables.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlrArd {
    config: BlrArdConfig,
    dim: usize,
    relevance: Relevance,
}

impl BlrArd {
    pub fn new(config: BlrArdConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        Ok(Self {
            config,
            dim,
            relevance: Relevance::Learned,
        })
    }

    /// Relevance held at `alpha`; sweeps only update (β, τ).
    pub fn with_fixed_relevance(config: BlrArdConfig, alpha: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(config, alpha.len())?;
        if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::config("alpha", "fixed relevance values must be > 0"));
        }
        m.relevance = Relevance::Fixed(alpha);
        Ok(m)
    }

    pub fn config(&self) -> &BlrArdConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn relevance(&self) -> &Relevance {
        &self.relevance
    }

    fn check(&self, state: &BlrArdState, data: &RegressionData) -> Result<()> {
        if state.dim != self.dim || data.dim() != self.dim {
            return Err(Error::domain("input dimension does not match the model"));
        }
        Ok(())
    }
}

/// E_q[ln p(y, β, τ, α)] − E_q[ln q(β, τ, α)].
fn blr_elbo(model: &BlrArd, state: &BlrArdState, data: &RegressionData) -> Result<f64> {
    model.check(state, data)?;
    let config = &model.config;
    let d = state.dim;
    let n = data.len() as f64;
    let chol = state.cholesky()?;
    let v_diag = chol.inverse_diagonal();
    let e_tau = state.e_tau();
    let e_ln_tau = psi(state.a_star) - mathf::ln(state.b_star);

    let s = data.gram(1.0, 0..data.len());
    let mut rss = 0.0;
    for i in 0..data.len() {
        let pred: f64 = data.row(i).iter().zip(&state.beta_star).map(|(x, b)| x * b).sum();
        rss += (data.y[i] - pred) * (data.y[i] - pred);
    }
    let mut elbo = 0.5 * n * (e_ln_tau - LN_2PI) - 0.5 * (e_tau * rss + chol.trace_inverse_times(&s.xtx));

    let (e_alpha, e_ln_alpha): (Vec<f64>, Vec<f64>) = match &model.relevance {
        Relevance::Learned => state
            .d_star
            .iter()
            .map(|dd| (state.c_star / dd, psi(state.c_star) - mathf::ln(*dd)))
            .unzip(),
        Relevance::Fixed(alpha) => alpha.iter().map(|a| (*a, mathf::ln(*a))).unzip(),
    };
    for j in 0..d {
        let e_tau_beta2 = state.beta_star[j] * state.beta_star[j] * e_tau + v_diag[j];
        elbo += 0.5 * (e_ln_alpha[j] + e_ln_tau - LN_2PI) - 0.5 * e_alpha[j] * e_tau_beta2;
    }

    let q_tau = ExpFamParam::gamma(state.a_star, state.b_star)?;
    elbo += ExpFamParam::gamma(config.a0, config.b0)?.expected_log_density(&q_tau)?;
    // H[q(β, τ)] = H[q(τ)] + E_τ H[N(β*, V*/τ)].
    elbo += q_tau.entropy() + 0.5 * d as f64 * (1.0 + LN_2PI - e_ln_tau) - 0.5 * chol.log_det();

    if model.relevance == Relevance::Learned {
        let p_alpha = ExpFamParam::gamma(config.c0, config.d0)?;
        for dd in &state.d_star {
            let q = ExpFamParam::gamma(state.c_star, *dd)?;
            elbo += p_alpha.expected_log_density(&q)? + q.entropy();
        }
    }
    ensure_finite(elbo, "ELBO")
}

/// Gaussian approximation to the predictive:
/// N(xᵀβ*, (b*/a*)(1 + xᵀV*x)).
pub fn predictive_log_density(state: &BlrArdState, x: &[f64], y: f64) -> Result<f64> {
    if x.len() != state.dim {
        return Err(Error::domain("input dimension does not match the state"));
    }
    let chol = state.cholesky()?;
    let vx = chol.solve(x);
    let quad: f64 = x.iter().zip(&vx).map(|(a, b)| a * b).sum();
    let mean: f64 = x.iter().zip(&state.beta_star).map(|(a, b)| a * b).sum();
    let var = state.b_star / state.a_star * (1.0 + quad);
    Ok(-0.5 * (LN_2PI + mathf::ln(var) + (y - mean) * (y - mean) / var))
}

impl CaviModel for BlrArd {
    type Data = RegressionData;
    type State = BlrArdState;

    /// `Prior`: q(α) at its prior (or at the fixed values), (β, τ) at the
    /// no-data update. `DataCalibrated`: E[α_d] = 1 jittered by a seeded
    /// log-normal factor with scale 0.1.
    fn init_state(&self, data: &RegressionData, strategy: InitStrategy, seed: u64) -> Result<BlrArdState> {
        if data.dim() != self.dim {
            return Err(Error::domain("input dimension does not match the model"));
        }
        let (c, d) = match (&self.relevance, strategy) {
            (Relevance::Fixed(alpha), _) => (1.0, alpha.iter().map(|a| 1.0 / a).collect()),
            (Relevance::Learned, InitStrategy::Prior) => (self.config.c0, alloc::vec![self.config.d0; self.dim]),
            (Relevance::Learned, InitStrategy::DataCalibrated) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c = self.config.c0 + 0.5;
                let d = (0..self.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c * mathf::exp(0.1 * z)
                    })
                    .collect();
                (c, d)
            }
        };
        BlrArdState::from_relevance(self.dim, &self.config, c, d)
    }

    fn sweep(&self, state: &mut BlrArdState, data: &RegressionData) -> Result<()> {
        self.check(state, data)?;
        update_coeff_precision(state, data, &self.config)?;
        if self.relevance == Relevance::Learned {
            update_relevance(state, &self.config)?;
        }
        Ok(())
    }

    fn elbo(&self, state: &BlrArdState, data: &RegressionData) -> Result<f64> {
        blr_elbo(self, state, data)
    }

    fn heldout_log_predictive(&self, state: &BlrArdState, heldout: &RegressionData) -> Result<f64> {
        if heldout.is_empty() {
            return Err(Error::domain("held-out set is empty"));
        }
        let mut total = 0.0;
        for i in 0..heldout.len() {
            total += predictive_log_density(state, heldout.row(i), heldout.y[i])?;
        }
        Ok(total / heldout.len() as f64)
    }

    fn metadata(&self) -> Vec<(String, f64)> {
        let c = &self.config;
        alloc::vec![
            (String::from("a0"), c.a0),
            (String::from("b0"), c.b0),
            (String::from("c0"), c.c0),
            (String::from("d0"), c.d0),
            (String::from("dim"), self.dim as f64),
        ]
    }
}

impl Perturb for BlrArdState {
    /// V*⁻¹ (lower triangle, mirrored), β*, a*, b*, c*, d*.
    fn param_count(&self) -> usize {
        let d = self.dim;
        d * (d + 1) / 2 + 2 * d + 3
    }

    fn perturbed(&self, mut idx: usize, delta: f64) -> Option<Self> {
        let d = self.dim;
        let mut out = self.clone();
        let tri = d * (d + 1) / 2;
        if idx < tri {
            let (mut i, mut j) = (0, idx);
            while j > i {
                j -= i + 1;
                i += 1;
            }
            out.v_inv[i * d + j] += delta;
            if i != j {
                out.v_inv[j * d + i] += delta;
            }
            return out.cholesky().ok().map(|_| out);
        }
        idx -= tri;
        if idx < d {
            out.beta_star[idx] += delta;
            return Some(out);
        }
        idx -= d;
        match idx {
            0 => out.a_star += delta,
            1 => out.b_star += delta,
            2 => out.c_star += delta,
            _ => *out.d_star.get_mut(idx - 3)? += delta,
        }
        out.validate().ok().map(|_| out)
    }
}

/// Stochastic natural-gradient fit. q(β, τ) is blended in its natural
/// coordinates (V*⁻¹β*, V*⁻¹, b* + ½β*ᵀV*⁻¹β*, a*) toward the update implied
/// by a minibatch replicated n/B times; q(α) then takes its coordinate
/// update. The ELBO is recorded at iteration 0 and every `elbo_every`
/// iterations.
pub fn blr_ard_svi_fit(
    model: &BlrArd,
    data: &RegressionData,
    heldout: Option<&RegressionData>,
    settings: &SviSettings,
    config: &FitConfig,
    init: BlrArdState,
    clock: &dyn Clock,
) -> Result<FitReport<BlrArdState>> {
    config.validate()?;
    model.check(&init, data)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::domain("SVI needs a nonempty dataset"));
    }
    if settings.batch_size == 0 || settings.batch_size > n {
        return Err(Error::config("batch", "must lie in [1, n]"));
    }
    let heldout = heldout.filter(|h| !h.is_empty());
    let mut metadata = model.metadata();
    metadata.extend([
        (String::from("kappa"), settings.schedule.kappa()),
        (String::from("delay"), settings.schedule.delay()),
        (String::from("scale"), settings.schedule.scale()),
        (String::from("batch"), settings.batch_size as f64),
    ]);
    let mut report = FitReport::empty(init, metadata);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = model.dim;

    let record = |report: &mut FitReport<BlrArdState>, it: usize| -> Result<f64> {
        let elbo = blr_elbo(model, &report.final_state, data).map_err(|e| e.at_iteration(it))?;
        report.elbo_trace.push(TracePoint {
            iter: it,
            elbo,
            elapsed_ms: clock.elapsed_ms(),
        });
        if let Some(h) = heldout {
            let lp = model
                .heldout_log_predictive(&report.final_state, h)
                .and_then(|v| ensure_finite(v, "held-out log predictive"))
                .map_err(|e| e.at_iteration(it))?;
            report.heldout_trace.push(HeldoutPoint {
                iter: it,
                log_predictive: lp,
            });
        }
        Ok(elbo)
    };

    let mut previous = record(&mut report, 0)?;
    for it in 1..=config.max_iters {
        let batch = rand::seq::index::sample(&mut rng, n, settings.batch_size).into_vec();
        let eps = settings.schedule.step_size(it);
        let mut step = || -> Result<()> {
            let state = &mut report.final_state;
            let s = data.gram(n as f64 / batch.len() as f64, batch.iter().copied());
            let e_alpha = match &model.relevance {
                Relevance::Learned => state.e_alpha(),
                Relevance::Fixed(alpha) => alpha.clone(),
            };
            // Current natural coordinates.
            let h: Vec<f64> = (0..d)
                .map(|a| (0..d).map(|b| state.v_inv[a * d + b] * state.beta_star[b]).sum())
                .collect();
            let quad: f64 = h.iter().zip(&state.beta_star).map(|(x, y)| x * y).sum();
            let r = state.b_star + 0.5 * quad;
            // Blend toward the replicated target.
            let mut target_v_inv = s.xtx;
            for j in 0..d {
                target_v_inv[j * d + j] += e_alpha[j];
            }
            let v_inv: Vec<f64> = state
                .v_inv
                .iter()
                .zip(&target_v_inv)
                .map(|(c, t)| (1.0 - eps) * c + eps * t)
                .collect();
            let h: Vec<f64> = h.iter().zip(&s.xty).map(|(c, t)| (1.0 - eps) * c + eps * t).collect();
            let r = (1.0 - eps) * r + eps * (model.config.b0 + 0.5 * s.yty);
            let a = (1.0 - eps) * state.a_star + eps * (model.config.a0 + 0.5 * n as f64);
            let chol = Cholesky::new(&v_inv, d)?;
            let beta = chol.solve(&h);
            let quad: f64 = beta.iter().zip(&h).map(|(x, y)| x * y).sum();
            state.v_inv = v_inv;
            state.beta_star = beta;
            state.a_star = a;
            state.b_star = r - 0.5 * quad;
            state.validate()?;
            if model.relevance == Relevance::Learned {
                update_relevance(state, &model.config)?;
            }
            Ok(())
        };
        step().map_err(|e| e.at_iteration(it))?;
        report.iterations_run = it;
        if it % config.elbo_every != 0 && it != config.max_iters {
            continue;
        }
        let current = record(&mut report, it)?;
        if relative_change(previous, current) < config.tol {
            report.converged = true;
            break;
        }
        previous = current;
    }
    Ok(report)
}
