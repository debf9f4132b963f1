use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Observations};
use crate::engine::{CaviModel, InitStrategy, Perturb};
use crate::error::ensure_finite;
use crate::expfam::{dirichlet_elog_unchecked, lse, normalize_log_weights, psi, ExpFamParam};
use crate::mathf::{self, LN_2PI};
use crate::{Error, Result};

/// Hyperparameters: symmetric Dirichlet(a0) on the mixing weights and
/// NormalGamma(m0, b0, alpha0, beta0) on every (μ_kd, τ_kd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagGmmConfig {
    pub k: usize,
    pub a0: f64,
    pub m0: f64,
    pub b0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl DiagGmmConfig {
    /// a0 = 1/K, m0 = 0, b0 = alpha0 = beta0 = 1.
    pub fn with_defaults(k: usize) -> Self {
        Self {
            k,
            a0: 1.0 / k.max(1) as f64,
            m0: 0.0,
            b0: 1.0,
            alpha0: 1.0,
            beta0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        let positive = [
            ("a0", self.a0),
            ("b0", self.b0),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be finite and > 0"));
            }
        }
        if !self.m0.is_finite() {
            return Err(Error::config("m0", "must be finite"));
        }
        Ok(())
    }
}

/// Normal-gamma factor q(μ, τ) = N(μ; m, 1/(κτ)) Gamma(τ; α, β).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalGammaParams {
    pub mean: f64,
    pub scale: f64,
    pub shape: f64,
    pub rate: f64,
}

impl NormalGammaParams {
    fn is_valid(&self) -> bool {
        self.mean.is_finite()
            && self.scale > 0.0
            && self.shape > 0.0
            && self.rate > 0.0
            && self.scale.is_finite()
            && self.shape.is_finite()
            && self.rate.is_finite()
    }

    pub fn to_expfam(&self) -> Result<ExpFamParam> {
        ExpFamParam::normal_gamma(self.mean, self.scale, self.shape, self.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmmState {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    components: Vec<NormalGammaParams>,
    resp: Vec<f64>,
}

impl DiagGmmState {
    /// `weights`: K Dirichlet concentrations. `components`: `k × dim`
    /// row-major. `resp`: `n × k`.
    pub fn new(
        k: usize,
        dim: usize,
        weights: Vec<f64>,
        components: Vec<NormalGammaParams>,
        resp: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::domain("k and dim must be >= 1"));
        }
        if weights.len() != k || components.len() != k * dim || !resp.len().is_multiple_of(k) {
            return Err(Error::domain("state shapes do not match k and dim"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::domain("Dirichlet concentrations must be > 0"));
        }
        if components.iter().any(|c| !c.is_valid()) {
            return Err(Error::domain("invalid normal-gamma factor"));
        }
        for row in resp.chunks_exact(k) {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::domain("responsibility rows must be probability vectors"));
            }
        }
        Ok(Self {
            k,
            dim,
            weights,
            components,
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

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[NormalGammaParams] {
        &self.components
    }

    pub fn component(&self, k: usize, d: usize) -> &NormalGammaParams {
        &self.components[k * self.dim + d]
    }

    pub fn resp(&self) -> &[f64] {
        &self.resp
    }

    pub fn resp_row(&self, i: usize) -> &[f64] {
        &self.resp[i * self.k..(i + 1) * self.k]
    }

    /// E[μ_kd], row-major.
    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mean).collect()
    }

    /// 1/E[τ_kd], row-major.
    pub fn variances(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.rate / c.shape).collect()
    }

    /// E[π].
    pub fn mixing_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

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
}

impl Perturb for DiagGmmState {
    fn param_count(&self) -> usize {
        self.resp.len() + self.k + 4 * self.components.len()
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
        let idx = idx - self.resp.len();
        if idx < self.k {
            out.weights[idx] += delta;
            return (out.weights[idx] > 0.0).then_some(out);
        }
        let idx = idx - self.k;
        let c = out.components.get_mut(idx / 4)?;
        match idx % 4 {
            0 => c.mean += delta,
            1 => c.scale += delta,
            2 => c.shape += delta,
            _ => c.rate += delta,
        }
        c.is_valid().then_some(out)
    }
}

fn check_shapes(state: &DiagGmmState, data: &Observations) -> Result<()> {
    if data.dim() != state.dim {
        return Err(Error::domain("data dimension does not match the state"));
    }
    if data.len() != state.n() {
        return Err(Error::domain("one responsibility row per observation is required"));
    }
    Ok(())
}

/// Per-(i, k) expected complete-data log terms
/// E[ln π_k] + Σ_d (½E[ln τ_kd] − ½ ln 2π − ½E[τ_kd (x_id − μ_kd)²]).
fn log_rho(state: &DiagGmmState, data: &Observations) -> Vec<f64> {
    let (k, dim) = (state.k, state.dim);
    let e_ln_pi = dirichlet_elog_unchecked(&state.weights);
    let mut base = e_ln_pi;
    let mut e_tau = Vec::with_capacity(k * dim);
    for (c, b) in base.iter_mut().enumerate() {
        for comp in &state.components[c * dim..(c + 1) * dim] {
            let e_ln_tau = psi(comp.shape) - mathf::ln(comp.rate);
            *b += 0.5 * (e_ln_tau - LN_2PI - 1.0 / comp.scale);
            e_tau.push(comp.shape / comp.rate);
        }
    }
    let mut out = Vec::with_capacity(data.len() * k);
    for x in data.rows() {
        for c in 0..k {
            let mut v = base[c];
            for d in 0..dim {
                let comp = &state.components[c * dim + d];
                let r = x[d] - comp.mean;
                v -= 0.5 * e_tau[c * dim + d] * r * r;
            }
            out.push(v);
        }
    }
    out
}

/// One CAVI sweep: responsibilities, then the Dirichlet factor, then every
/// normal-gamma factor.
pub fn diag_gmm_sweep(state: &mut DiagGmmState, data: &Observations, config: &DiagGmmConfig) -> Result<()> {
    if data.dim() != state.dim || config.k != state.k {
        return Err(Error::domain("data or config does not match the state"));
    }
    let (k, dim, n) = (state.k, state.dim, data.len());

    let mut resp = log_rho(state, data);
    for row in resp.chunks_exact_mut(k) {
        normalize_log_weights(row);
    }
    if resp.iter().any(|p| !p.is_finite()) {
        return Err(Error::non_finite("responsibilities"));
    }
    state.resp = resp;

    let mut counts = alloc::vec![0.0; k];
    let mut sums = alloc::vec![0.0; k * dim];
    for i in 0..n {
        let x = data.row(i);
        for c in 0..k {
            let r = state.resp[i * k + c];
            counts[c] += r;
            for d in 0..dim {
                sums[c * dim + d] += r * x[d];
            }
        }
    }
    // Weighted centered squares about the component's data mean keep the
    // rate update free of cancellation.
    let mut centered = alloc::vec![0.0; k * dim];
    for i in 0..n {
        let x = data.row(i);
        for c in 0..k {
            let r = state.resp[i * k + c];
            if counts[c] <= 0.0 || r == 0.0 {
                continue;
            }
            for d in 0..dim {
                let dev = x[d] - sums[c * dim + d] / counts[c];
                centered[c * dim + d] += r * dev * dev;
            }
        }
    }

    for c in 0..k {
        state.weights[c] = config.a0 + counts[c];
        let nk = counts[c];
        for d in 0..dim {
            let j = c * dim + d;
            let scale = config.b0 + nk;
            let (mean, spread) = if nk > 0.0 {
                let xbar = sums[j] / nk;
                let shift = xbar - config.m0;
                (
                    (config.b0 * config.m0 + sums[j]) / scale,
                    centered[j] + config.b0 * nk / scale * shift * shift,
                )
            } else {
                (config.m0, 0.0)
            };
            let comp = NormalGammaParams {
                mean,
                scale,
                shape: config.alpha0 + 0.5 * nk,
                rate: config.beta0 + 0.5 * spread,
            };
            if !comp.is_valid() {
                return Err(Error::non_finite("normal-gamma factor"));
            }
            state.components[j] = comp;
        }
    }
    Ok(())
}

/// E_q[ln p(x, z, π, μ, τ)] − E_q[ln q].
pub fn diag_gmm_elbo(state: &DiagGmmState, data: &Observations, config: &DiagGmmConfig) -> Result<f64> {
    check_shapes(state, data)?;
    let k = state.k;
    let mut elbo = 0.0;
    let rho = log_rho(state, data);
    for (r_row, l_row) in state.resp.chunks_exact(k).zip(rho.chunks_exact(k)) {
        for (&r, &l) in r_row.iter().zip(l_row) {
            if r > 0.0 {
                elbo += r * (l - mathf::ln(r));
            }
        }
    }
    // With one component π is the point mass at 1 and contributes nothing.
    if k > 1 {
        let q_pi = ExpFamParam::dirichlet(state.weights.clone())?;
        let p_pi = ExpFamParam::dirichlet(alloc::vec![config.a0; k])?;
        elbo += p_pi.expected_log_density(&q_pi)? + q_pi.entropy();
    }
    let prior = NormalGammaParams {
        mean: config.m0,
        scale: config.b0,
        shape: config.alpha0,
        rate: config.beta0,
    }
    .to_expfam()?;
    for comp in &state.components {
        let q = comp.to_expfam()?;
        elbo += prior.expected_log_density(&q)? + q.entropy();
    }
    ensure_finite(elbo, "ELBO")
}

/// Plug-in predictive log density log Σ_k E[π_k] Π_d N(x_d; E[μ_kd], 1/E[τ_kd]).
pub fn diag_predictive_log_density(state: &DiagGmmState, x: &[f64]) -> Result<f64> {
    if x.len() != state.dim {
        return Err(Error::domain("point dimension does not match the state"));
    }
    let dim = state.dim;
    let weights = state.mixing_weights();
    let terms: Vec<f64> = (0..state.k)
        .map(|c| {
            let mut v = mathf::ln(weights[c]);
            for (d, comp) in state.components[c * dim..(c + 1) * dim].iter().enumerate() {
                let prec = comp.shape / comp.rate;
                let r = x[d] - comp.mean;
                v += 0.5 * (mathf::ln(prec) - LN_2PI - prec * r * r);
            }
            v
        })
        .collect();
    Ok(lse(&terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    config: DiagGmmConfig,
    dim: usize,
}

impl DiagGmm {
    pub fn new(config: DiagGmmConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        Ok(Self { config, dim })
    }

    pub fn config(&self) -> &DiagGmmConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn prior_component(&self) -> NormalGammaParams {
        NormalGammaParams {
            mean: self.config.m0,
            scale: self.config.b0,
            shape: self.config.alpha0,
            rate: self.config.beta0,
        }
    }
}

impl CaviModel for DiagGmm {
    type Data = Observations;
    type State = DiagGmmState;

    /// `Prior`: every factor at its prior, uniform responsibilities.
    /// `DataCalibrated`: component means at K distinct data points chosen by
    /// seed, expected precisions at the inverse empirical variance.
    fn init_state(&self, data: &Observations, strategy: InitStrategy, seed: u64) -> Result<DiagGmmState> {
        if data.dim() != self.dim {
            return Err(Error::domain("data dimension does not match the model"));
        }
        let (k, dim, n) = (self.config.k, self.dim, data.len());
        let mut components = alloc::vec![self.prior_component(); k * dim];
        let mut weights = alloc::vec![self.config.a0; k];
        if strategy == InitStrategy::DataCalibrated && n > 0 {
            let (_, var) = data.moments();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks: Vec<usize> = if n >= k {
                rand::seq::index::sample(&mut rng, n, k).into_vec()
            } else {
                (0..k).map(|c| c % n).collect()
            };
            for (c, &i) in picks.iter().enumerate() {
                for d in 0..dim {
                    let comp = &mut components[c * dim + d];
                    comp.mean = data.row(i)[d];
                    comp.rate = comp.shape * var[d].max(1e-6);
                }
            }
            weights.iter_mut().for_each(|w| *w += n as f64 / k as f64);
        }
        DiagGmmState::new(k, dim, weights, components, alloc::vec![1.0 / k as f64; n * k])
    }

    fn sweep(&self, state: &mut DiagGmmState, data: &Observations) -> Result<()> {
        diag_gmm_sweep(state, data, &self.config)
    }

    fn elbo(&self, state: &DiagGmmState, data: &Observations) -> Result<f64> {
        diag_gmm_elbo(state, data, &self.config)
    }

    fn heldout_log_predictive(&self, state: &DiagGmmState, heldout: &Observations) -> Result<f64> {
        if heldout.is_empty() {
            return Err(Error::domain("held-out set is empty"));
        }
        let mut total = 0.0;
        for x in heldout.rows() {
            total += diag_predictive_log_density(state, x)?;
        }
        Ok(total / heldout.len() as f64)
    }

    fn metadata(&self) -> Vec<(String, f64)> {
        let c = &self.config;
        alloc::vec![
            (String::from("k"), c.k as f64),
            (String::from("a0"), c.a0),
            (String::from("m0"), c.m0),
            (String::from("b0"), c.b0),
            (String::from("alpha0"), c.alpha0),
            (String::from("beta0"), c.beta0),
            (String::from("dim"), self.dim as f64),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{cavi_fit, max_perturbation_gain, FitConfig, NoClock};
    use crate::expfam::ln_gamma;

    fn toy() -> Observations {
        Observations::new(
            2,
            alloc::vec![-3.1, 0.2, -2.7, 0.5, -3.4, -0.1, 2.9, 4.0, 3.3, 4.4, 3.0, 3.7, 0.1, 1.9],
        )
        .unwrap()
    }

    /// Conjugate normal-gamma posterior in the textbook centered form.
    fn conjugate(xs: &[f64], m0: f64, k0: f64, a0: f64, b0: f64) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let xbar = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let kn = k0 + n;
        (
            (k0 * m0 + n * xbar) / kn,
            kn,
            a0 + n / 2.0,
            b0 + 0.5 * ss + k0 * n * (xbar - m0) * (xbar - m0) / (2.0 * kn),
        )
    }

    fn log_evidence(xs: &[f64], m0: f64, k0: f64, a0: f64, b0: f64) -> f64 {
        let (_, kn, an, bn) = conjugate(xs, m0, k0, a0, b0);
        ln_gamma(an) - ln_gamma(a0) + a0 * b0.ln() - an * bn.ln() + 0.5 * (k0 / kn).ln()
            - 0.5 * xs.len() as f64 * LN_2PI
    }

    #[test]
    fn single_component_matches_conjugate_posterior() {
        let data = toy();
        let config = DiagGmmConfig {
            m0: 0.5,
            b0: 2.0,
            alpha0: 1.5,
            beta0: 0.7,
            ..DiagGmmConfig::with_defaults(1)
        };
        let model = DiagGmm::new(config, 2).unwrap();
        let mut state = model.init_state(&data, InitStrategy::Prior, 0).unwrap();
        model.sweep(&mut state, &data).unwrap();
        let mut evidence = 0.0;
        for d in 0..2 {
            let xs: Vec<f64> = data.rows().map(|r| r[d]).collect();
            let (m, k, a, b) = conjugate(&xs, 0.5, 2.0, 1.5, 0.7);
            let c = state.component(0, d);
            for (got, want) in [(c.mean, m), (c.scale, k), (c.shape, a), (c.rate, b)] {
                assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
            }
            evidence += log_evidence(&xs, 0.5, 2.0, 1.5, 0.7);
        }
        assert_eq!(state.weights(), &[1.0 + 7.0]);
        let elbo = diag_gmm_elbo(&state, &data, &config).unwrap();
        assert!((elbo - evidence).abs() < 1e-9, "{elbo} vs {evidence}");
    }

    #[test]
    fn sweeps_keep_rows_normalized_and_elbo_nondecreasing() {
        let data = toy();
        let model = DiagGmm::new(DiagGmmConfig::with_defaults(3), 2).unwrap();
        for seed in 0..10 {
            let mut state = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..30 {
                model.sweep(&mut state, &data).unwrap();
                for row in state.resp().chunks_exact(3) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                let e = model.elbo(&state, &data).unwrap();
                assert!(e >= prev - 1e-8 * (1.0 + prev.abs()), "{prev} -> {e}");
                prev = e;
            }
        }
    }

    #[test]
    fn converged_state_is_coordinate_optimal() {
        let data = toy();
        let model = DiagGmm::new(DiagGmmConfig::with_defaults(2), 2).unwrap();
        let init = model.init_state(&data, InitStrategy::DataCalibrated, 4).unwrap();
        let config = FitConfig {
            max_iters: 2000,
            tol: 1e-14,
            ..FitConfig::default()
        };
        let report = cavi_fit(&model, &data, None, &config, init, &NoClock).unwrap();
        let gain = max_perturbation_gain(&model, &report.final_state, &data, 1e-4).unwrap();
        assert!(gain <= 1e-9, "gain {gain}");
    }

    #[test]
    fn defaults_are_recorded() {
        let c = DiagGmmConfig::with_defaults(4);
        assert_eq!((c.a0, c.m0, c.b0, c.alpha0, c.beta0), (0.25, 0.0, 1.0, 1.0, 1.0));
        let model = DiagGmm::new(c, 2).unwrap();
        let data = toy();
        let init = model.init_state(&data, InitStrategy::DataCalibrated, 0).unwrap();
        let report = cavi_fit(&model, &data, None, &FitConfig::default(), init, &NoClock).unwrap();
        let meta = |key: &str| report.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
        assert_eq!(meta("a0"), Some(0.25));
        assert_eq!(meta("beta0"), Some(1.0));
    }

    #[test]
    fn invalid_hyperparameters_name_their_field() {
        let c = DiagGmmConfig {
            beta0: 0.0,
            ..DiagGmmConfig::with_defaults(2)
        };
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "beta0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predictive_integrates_to_one() {
        let data = Observations::univariate(alloc::vec![-2.0, -1.5, 1.0, 1.4, 2.2]).unwrap();
        let model = DiagGmm::new(DiagGmmConfig::with_defaults(2), 1).unwrap();
        let mut s = model.init_state(&data, InitStrategy::DataCalibrated, 1).unwrap();
        for _ in 0..10 {
            model.sweep(&mut s, &data).unwrap();
        }
        let h = 1e-3;
        let total: f64 = (0..30_000)
            .map(|i| -15.0 + (i as f64 + 0.5) * h)
            .map(|x| diag_predictive_log_density(&s, &[x]).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-4);
    }
}
