use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::condconj::{cond_conj_elbo, ConditionallyConjugate, ConjugateElbo, GlobalLocalState, GlobalNatural};
use crate::data::{Dataset, Observations};
use crate::engine::{CaviModel, InitStrategy, MeanFieldState, Perturb};
use crate::error::ensure_finite;
use crate::expfam::{lse, normalize_log_weights, ExpFamParam, Family};
use crate::mathf::{self, LN_2PI};
use crate::{Error, Result};

/// K components with N(0, σ²) priors on the component means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub sigma2: f64,
}

impl GmmConfig {
    pub fn new(k: usize, sigma2: f64) -> Result<Self> {
        let c = Self { k, sigma2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::config("sigma2", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Variational parameters: a Gaussian N(m_kd, s²_kd) per component and
/// coordinate, and a categorical responsibility row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    k: usize,
    dim: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
    resp: Vec<f64>,
}

impl GmmState {
    /// `means` and `variances` are `k × dim` row-major; `resp` is `n × k`.
    pub fn new(k: usize, dim: usize, means: Vec<f64>, variances: Vec<f64>, resp: Vec<f64>) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::domain("k and dim must be >= 1"));
        }
        if means.len() != k * dim || variances.len() != k * dim || !resp.len().is_multiple_of(k) {
            return Err(Error::domain("state shapes do not match k and dim"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::non_finite("component mean"));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("component variances must be > 0"));
        }
        for row in resp.chunks_exact(k) {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::domain("responsibility rows must be probability vectors"));
            }
        }
        Ok(Self {
            k,
            dim,
            means,
            variances,
            resp,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.resp.len() / self.k
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn resp(&self) -> &[f64] {
        &self.resp
    }

    pub fn resp_row(&self, i: usize) -> &[f64] {
        &self.resp[i * self.k..(i + 1) * self.k]
    }

    /// MAP assignment per observation.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.resp
            .chunks_exact(self.k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
                    .0
            })
            .collect()
    }

    /// Factors in declaration order: assignments `c[i]`, then component
    /// coordinates `mu[k][d]`.
    pub fn to_meanfield(&self) -> MeanFieldState {
        let mut s = MeanFieldState::new();
        for i in 0..self.n() {
            let row = self.resp_row(i).to_vec();
            s.push(alloc::format!("c[{i}]"), ExpFamParam::new(Family::Categorical, row).expect("valid row"));
        }
        for (j, (&m, &v)) in self.means.iter().zip(&self.variances).enumerate() {
            s.push(
                alloc::format!("mu[{}][{}]", j / self.dim, j % self.dim),
                ExpFamParam::gaussian(m, v).expect("valid factor"),
            );
        }
        s
    }

    pub fn from_meanfield(k: usize, dim: usize, mf: &MeanFieldState) -> Result<Self> {
        let kd = k * dim;
        if mf.len() < kd {
            return Err(Error::domain("too few factors"));
        }
        let n = mf.len() - kd;
        let mut resp = Vec::with_capacity(n * k);
        for f in &mf.factors()[..n] {
            if f.family() != Family::Categorical || f.params().len() != k {
                return Err(Error::domain("expected categorical assignment factors"));
            }
            resp.extend_from_slice(f.params());
        }
        let mut means = Vec::with_capacity(kd);
        let mut variances = Vec::with_capacity(kd);
        for f in &mf.factors()[n..] {
            if f.family() != Family::Gaussian {
                return Err(Error::domain("expected Gaussian component factors"));
            }
            means.push(f.params()[0]);
            variances.push(f.params()[1]);
        }
        Self::new(k, dim, means, variances, resp)
    }
}

impl Perturb for GmmState {
    fn param_count(&self) -> usize {
        self.resp.len() + 2 * self.means.len()
    }

    fn perturbed(&self, idx: usize, delta: f64) -> Option<Self> {
        let mut out = self.clone();
        if idx < self.resp.len() {
            let i = idx / self.k;
            let row = &mut out.resp[i * self.k..(i + 1) * self.k];
            row[idx % self.k] += delta;
            if row[idx % self.k] < 0.0 {
                return None;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            return Some(out);
        }
        let j = idx - self.resp.len();
        if j >= 2 * self.means.len() {
            return None;
        }
        if j.is_multiple_of(2) {
            out.means[j / 2] += delta;
        } else {
            out.variances[j / 2] += delta;
            if !(out.variances[j / 2] > 0.0) {
                return None;
            }
        }
        Some(out)
    }
}

fn check_shapes(state: &GmmState, data: &Observations) -> Result<()> {
    if data.dim() != state.dim {
        return Err(Error::domain("data dimension does not match the state"));
    }
    if data.len() != state.n() {
        return Err(Error::domain("one responsibility row per observation is required"));
    }
    Ok(())
}

/// φ_ik ∝ exp{Σ_d E[μ_kd] x_id − E[μ_kd²]/2}, normalized in log space.
/// Depends only on the component factors.
pub fn update_assignments(state: &mut GmmState, data: &Observations) -> Result<()> {
    if data.dim() != state.dim {
        return Err(Error::domain("data dimension does not match the state"));
    }
    let (k, dim) = (state.k, state.dim);
    state.resp.resize(data.len() * k, 0.0);
    let half_e_mu2: Vec<f64> = (0..k)
        .map(|c| {
            (0..dim)
                .map(|d| {
                    let m = state.means[c * dim + d];
                    0.5 * (m * m + state.variances[c * dim + d])
                })
                .sum()
        })
        .collect();
    for (i, x) in data.rows().enumerate() {
        let row = &mut state.resp[i * k..(i + 1) * k];
        for (c, w) in row.iter_mut().enumerate() {
            let m = &state.means[c * dim..(c + 1) * dim];
            *w = m.iter().zip(x).map(|(m, x)| m * x).sum::<f64>() - half_e_mu2[c];
        }
        normalize_log_weights(row);
    }
    Ok(())
}

/// m_kd = Σ_i φ_ik x_id / (1/σ² + Σ_i φ_ik), s²_kd = 1 / (1/σ² + Σ_i φ_ik).
pub fn update_components(state: &mut GmmState, data: &Observations, sigma2: f64) -> Result<()> {
    check_shapes(state, data)?;
    let (k, dim) = (state.k, state.dim);
    let mut counts = alloc::vec![0.0; k];
    let mut sums = alloc::vec![0.0; k * dim];
    for (i, x) in data.rows().enumerate() {
        for c in 0..k {
            let phi = state.resp[i * k + c];
            counts[c] += phi;
            for d in 0..dim {
                sums[c * dim + d] += phi * x[d];
            }
        }
    }
    for c in 0..k {
        let precision = 1.0 / sigma2 + counts[c];
        for d in 0..dim {
            state.means[c * dim + d] = sums[c * dim + d] / precision;
            state.variances[c * dim + d] = 1.0 / precision;
        }
    }
    Ok(())
}

/// Closed-form ELBO: E[log p(μ)] + Σ_i (E[log p(c_i)] + E[log p(x_i | c_i, μ)])
/// − Σ_i E[log q(c_i)] − E[log q(μ)], with log p(c_i) = −log K.
pub fn gmm_elbo(state: &GmmState, data: &Observations, sigma2: f64) -> Result<f64> {
    check_shapes(state, data)?;
    let (k, dim) = (state.k, state.dim);
    let mut elbo = 0.0;
    for (&m, &v) in state.means.iter().zip(&state.variances) {
        let prior = -0.5 * (LN_2PI + mathf::ln(sigma2)) - (m * m + v) / (2.0 * sigma2);
        let entropy = 0.5 * (LN_2PI + 1.0 + mathf::ln(v));
        elbo += prior + entropy;
    }
    let ln_k = mathf::ln(k as f64);
    for (i, x) in data.rows().enumerate() {
        for c in 0..k {
            let phi = state.resp[i * k + c];
            if phi <= 0.0 {
                continue;
            }
            let mut loglik = -0.5 * dim as f64 * LN_2PI;
            for d in 0..dim {
                let m = state.means[c * dim + d];
                let v = state.variances[c * dim + d];
                loglik -= 0.5 * (x[d] * x[d] - 2.0 * x[d] * m + m * m + v);
            }
            elbo += phi * (loglik - ln_k - mathf::ln(phi));
        }
    }
    ensure_finite(elbo, "ELBO")
}

/// log[(1/K) Σ_k N(x_new; m_k, I)].
pub fn predictive_log_density(state: &GmmState, x_new: &[f64]) -> Result<f64> {
    if x_new.len() != state.dim {
        return Err(Error::domain("point dimension does not match the state"));
    }
    let dim = state.dim;
    let terms: Vec<f64> = (0..state.k)
        .map(|c| {
            let sq: f64 = state.means[c * dim..(c + 1) * dim]
                .iter()
                .zip(x_new)
                .map(|(m, x)| (x - m) * (x - m))
                .sum();
            -0.5 * (dim as f64 * LN_2PI + sq)
        })
        .collect();
    Ok(lse(&terms) - mathf::ln(state.k as f64))
}

/// The unit-variance mixture as a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    config: GmmConfig,
    dim: usize,
    prior: GlobalNatural,
}

impl Gmm {
    pub fn new(config: GmmConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        let kd = config.k * dim;
        let mut stats = Vec::with_capacity(2 * kd);
        for _ in 0..kd {
            stats.push(0.0);
            stats.push(-0.5 / config.sigma2);
        }
        Ok(Self {
            config,
            dim,
            prior: GlobalNatural::new(stats, 0.0),
        })
    }

    pub fn config(&self) -> &GmmConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State whose every factor is the prior and every row uniform.
    pub fn prior_state(&self, n: usize) -> GmmState {
        let (k, kd) = (self.config.k, self.config.k * self.dim);
        GmmState {
            k,
            dim: self.dim,
            means: alloc::vec![0.0; kd],
            variances: alloc::vec![self.config.sigma2; kd],
            resp: alloc::vec![1.0 / k as f64; n * k],
        }
    }

    /// λ for the component factors of `state`.
    pub fn global_from_state(&self, state: &GmmState) -> GlobalNatural {
        let mut stats = Vec::with_capacity(2 * state.means.len());
        for (&m, &v) in state.means.iter().zip(&state.variances) {
            stats.push(m / v);
            stats.push(-0.5 / v);
        }
        GlobalNatural::new(stats, self.prior.count + state.n() as f64)
    }

    /// Component factors (m, s²) decoded from λ.
    pub fn components_from_global(&self, lambda: &GlobalNatural) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_global(lambda)?;
        let (means, variances) = lambda
            .stats
            .chunks_exact(2)
            .map(|eta| {
                let v = -0.5 / eta[1];
                (eta[0] * v, v)
            })
            .unzip();
        Ok((means, variances))
    }

    /// Typed state from λ and categorical local factors.
    pub fn state_from_global(&self, lambda: &GlobalNatural, phis: &[ExpFamParam]) -> Result<GmmState> {
        let (means, variances) = self.components_from_global(lambda)?;
        let resp = phis.iter().flat_map(|p| p.params().iter().copied()).collect();
        GmmState::new(self.config.k, self.dim, means, variances, resp)
    }
}

impl CaviModel for Gmm {
    type Data = Observations;
    type State = GmmState;

    /// `Prior`: all components N(0, σ²), uniform responsibilities.
    /// `DataCalibrated`: component means drawn coordinatewise from
    /// N(empirical mean, empirical variance), variances σ², uniform rows.
    fn init_state(&self, data: &Observations, strategy: InitStrategy, seed: u64) -> Result<GmmState> {
        if data.dim() != self.dim {
            return Err(Error::domain("data dimension does not match the model"));
        }
        let mut state = self.prior_state(data.len());
        if strategy == InitStrategy::DataCalibrated {
            let (mean, var) = data.moments();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for c in 0..self.config.k {
                for d in 0..self.dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    state.means[c * self.dim + d] = mean[d] + mathf::sqrt(var[d]) * z;
                }
            }
        }
        Ok(state)
    }

    fn sweep(&self, state: &mut GmmState, data: &Observations) -> Result<()> {
        update_assignments(state, data)?;
        update_components(state, data, self.config.sigma2)
    }

    fn elbo(&self, state: &GmmState, data: &Observations) -> Result<f64> {
        gmm_elbo(state, data, self.config.sigma2)
    }

    fn heldout_log_predictive(&self, state: &GmmState, heldout: &Observations) -> Result<f64> {
        if heldout.is_empty() {
            return Err(Error::domain("held-out set is empty"));
        }
        let mut total = 0.0;
        for x in heldout.rows() {
            total += predictive_log_density(state, x)?;
        }
        Ok(total / heldout.len() as f64)
    }

    fn metadata(&self) -> Vec<(String, f64)> {
        alloc::vec![
            (String::from("k"), self.config.k as f64),
            (String::from("sigma2"), self.config.sigma2),
            (String::from("dim"), self.dim as f64),
        ]
    }
}

/// Expected first and second moments of each component coordinate.
#[derive(Debug, Clone)]
pub struct GmmExpectations {
    e_mu: Vec<f64>,
    half_e_mu2: Vec<f64>,
}

impl ConditionallyConjugate for Gmm {
    type Data = Observations;
    type Local = ExpFamParam;
    type Expectations = GmmExpectations;

    /// Per component coordinate the statistic block holds
    /// [Σ φ_ik x_id, −1/(2σ²) − Σ φ_ik / 2]; the count block is unused
    /// because the local log normalizer is folded into t.
    fn prior(&self) -> &GlobalNatural {
        &self.prior
    }

    fn expectations(&self, lambda: &GlobalNatural) -> Result<GmmExpectations> {
        let (means, variances) = self.components_from_global(lambda)?;
        let dim = self.dim;
        let half_e_mu2 = (0..self.config.k)
            .map(|c| {
                (0..dim)
                    .map(|d| {
                        let j = c * dim + d;
                        0.5 * (means[j] * means[j] + variances[j])
                    })
                    .sum()
            })
            .collect();
        Ok(GmmExpectations {
            e_mu: means,
            half_e_mu2,
        })
    }

    fn local_step(&self, e: &GmmExpectations, data: &Observations, i: usize) -> Result<ExpFamParam> {
        let x = data.row(i);
        let dim = self.dim;
        let mut w: Vec<f64> = (0..self.config.k)
            .map(|c| {
                e.e_mu[c * dim..(c + 1) * dim]
                    .iter()
                    .zip(x)
                    .map(|(m, x)| m * x)
                    .sum::<f64>()
                    - e.half_e_mu2[c]
            })
            .collect();
        normalize_log_weights(&mut w);
        ExpFamParam::new(Family::Categorical, w)
    }

    fn add_suff_stat(&self, phi: &ExpFamParam, data: &Observations, i: usize, scale: f64, out: &mut [f64]) {
        let x = data.row(i);
        let dim = self.dim;
        for (c, &p) in phi.params().iter().enumerate() {
            for d in 0..dim {
                let j = 2 * (c * dim + d);
                out[j] += scale * p * x[d];
                out[j + 1] -= scale * 0.5 * p;
            }
        }
    }

    fn check_global(&self, lambda: &GlobalNatural) -> Result<()> {
        if lambda.stats.len() != self.prior.stats.len() {
            return Err(Error::domain("global parameter has the wrong length"));
        }
        for eta in lambda.stats.chunks_exact(2) {
            if !eta[0].is_finite() || !eta[1].is_finite() {
                return Err(Error::non_finite("global parameter"));
            }
            if !(eta[1] < 0.0) {
                return Err(Error::InvalidParameter {
                    quantity: "Gaussian precision natural parameter",
                    value: eta[1],
                    iteration: None,
                });
            }
        }
        Ok(())
    }

    fn elbo_at(&self, lambda: &GlobalNatural, data: &Observations) -> Result<f64> {
        let phis = crate::condconj::local_steps(self, lambda, data)?;
        let state = GlobalLocalState {
            lambda: lambda.clone(),
            phis,
        };
        Ok(cond_conj_elbo(self, &state, data)? + self.elbo_offset(data))
    }

    fn heldout_log_predictive(&self, lambda: &GlobalNatural, heldout: &Observations) -> Result<f64> {
        let state = self.state_from_global(lambda, &[])?;
        CaviModel::heldout_log_predictive(self, &state, heldout)
    }
}

impl ConjugateElbo for Gmm {
    fn expected_global(&self, lambda: &GlobalNatural) -> Result<(Vec<f64>, f64)> {
        let (means, variances) = self.components_from_global(lambda)?;
        let e_beta = means
            .iter()
            .zip(&variances)
            .flat_map(|(&m, &v)| [m, m * m + v])
            .collect();
        Ok((e_beta, 0.0))
    }

    fn global_log_q(&self, lambda: &GlobalNatural) -> Result<f64> {
        let (means, variances) = self.components_from_global(lambda)?;
        let mut acc = 0.0;
        for (&m, &v) in means.iter().zip(&variances) {
            let f = ExpFamParam::gaussian(m, v)?;
            acc += crate::expfam::dot(&f.natural_params(), &f.expected_suff_stats()) - f.log_normalizer();
        }
        Ok(acc)
    }

    fn local_log_q(&self, phi: &ExpFamParam) -> f64 {
        -phi.entropy()
    }

    /// −(Kd/2) ln σ² − n ln K − (nd/2) ln 2π − ½ Σ_i ‖x_i‖².
    fn elbo_offset(&self, data: &Observations) -> f64 {
        let n = data.len() as f64;
        let kd = (self.config.k * self.dim) as f64;
        let sq: f64 = data.values().iter().map(|x| x * x).sum();
        -0.5 * kd * mathf::ln(self.config.sigma2)
            - n * mathf::ln(self.config.k as f64)
            - 0.5 * n * self.dim as f64 * LN_2PI
            - 0.5 * sq
    }
}
