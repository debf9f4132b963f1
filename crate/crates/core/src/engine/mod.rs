//! The coordinate-ascent driver and the types every model shares.
//!
//! A model implements [`CaviModel`]: a full sweep that sets each factor to
//! its coordinate optimum (local factors first, then global ones), a
//! closed-form ELBO, and an approximate predictive density for held-out
//! monitoring. [`cavi_fit`] repeats sweeps, records the ELBO at the configured
//! cadence, and stops on a small relative ELBO change.

mod diagnostic;

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

pub use diagnostic::{gaussian_contour, meanfield_gaussian_fixed_point, BivariateGaussianTarget, NoData};

use crate::data::Dataset;
use crate::error::ensure_finite;
use crate::expfam::ExpFamParam;
use crate::{Error, Result};

/// Relative slack allowed between consecutive recorded ELBO values.
pub const ELBO_SLACK: f64 = 1e-8;

/// How a model's variational factors are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Every global factor starts at its prior; local factors start uniform.
    Prior,
    /// Global location factors are drawn from a factorized Gaussian matched
    /// to the empirical mean and variance of the data.
    DataCalibrated,
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(InitStrategy::Prior),
            "data_calibrated" | "data-calibrated" => Ok(InitStrategy::DataCalibrated),
            other => Err(Error::config(
                "init",
                alloc::format!("unknown strategy `{other}` (expected prior or data_calibrated)"),
            )),
        }
    }
}

/// Loop controls shared by CAVI and SVI.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once |ELBO_t − ELBO_{t−1}| / (1 + |ELBO_t|) falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Fraction of the data held out for predictive monitoring, in [0, 0.5].
    pub heldout_fraction: f64,
    /// Record the ELBO every this many iterations.
    pub elbo_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
            heldout_fraction: 0.0,
            elbo_every: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be positive"));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::config("tol", "must be finite and > 0"));
        }
        if !(0.0..=0.5).contains(&self.heldout_fraction) {
            return Err(Error::config("heldout_fraction", "must lie in [0, 0.5]"));
        }
        if self.elbo_every == 0 {
            return Err(Error::config("elbo_every", "must be positive"));
        }
        Ok(())
    }
}

/// Labeled collection of variational factors q(z) = Π_j q_j(z_j).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanFieldState {
    factors: Vec<ExpFamParam>,
    labels: Vec<String>,
}

impl MeanFieldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, factor: ExpFamParam) {
        self.labels.push(label.into());
        self.factors.push(factor);
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[ExpFamParam] {
        &self.factors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn factor(&self, j: usize) -> &ExpFamParam {
        &self.factors[j]
    }

    pub fn get(&self, label: &str) -> Option<&ExpFamParam> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|j| &self.factors[j])
    }

    /// Replaces factor `j`. The family and parameter count may not change.
    pub fn set(&mut self, j: usize, factor: ExpFamParam) -> Result<()> {
        let old = &self.factors[j];
        if old.family() != factor.family() || old.params().len() != factor.params().len() {
            return Err(Error::domain("factor family is fixed for the lifetime of a fit"));
        }
        self.factors[j] = factor;
        Ok(())
    }
}

/// Variational states whose canonical parameters can be nudged one at a time.
pub trait Perturb: Sized {
    fn param_count(&self) -> usize;

    /// Copy with parameter `idx` shifted by `delta`, or `None` if that leaves
    /// the valid region.
    fn perturbed(&self, idx: usize, delta: f64) -> Option<Self>;
}

impl Perturb for MeanFieldState {
    fn param_count(&self) -> usize {
        self.factors.iter().map(|f| f.params().len()).sum()
    }

    fn perturbed(&self, mut idx: usize, delta: f64) -> Option<Self> {
        for (j, f) in self.factors.iter().enumerate() {
            let len = f.params().len();
            if idx < len {
                let mut out = self.clone();
                out.factors[j] = f.perturbed(idx, delta)?;
                return Some(out);
            }
            idx -= len;
        }
        None
    }
}

/// A model fit by coordinate ascent.
pub trait CaviModel {
    type Data: Dataset;
    type State: Clone;

    /// Builds a starting state. Identical inputs give bit-identical states.
    fn init_state(&self, data: &Self::Data, strategy: InitStrategy, seed: u64) -> Result<Self::State>;

    /// One full sweep, setting every factor to its coordinate optimum in
    /// declaration order.
    fn sweep(&self, state: &mut Self::State, data: &Self::Data) -> Result<()>;

    /// E_q[log p(z, x)] − E_q[log q(z)].
    fn elbo(&self, state: &Self::State, data: &Self::Data) -> Result<f64>;

    /// Mean log approximate predictive density of the held-out points.
    fn heldout_log_predictive(&self, state: &Self::State, heldout: &Self::Data) -> Result<f64>;

    /// Hyperparameters and other scalars to carry into the fit report.
    fn metadata(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
}

/// Wall-clock source for trace timings. The core crate has no clock of its
/// own; [`NoClock`] reports zero.
pub trait Clock {
    fn elapsed_ms(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub elbo: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldoutPoint {
    pub iter: usize,
    pub log_predictive: f64,
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<S> {
    pub final_state: S,
    pub elbo_trace: Vec<TracePoint>,
    pub heldout_trace: Vec<HeldoutPoint>,
    pub converged: bool,
    pub iterations_run: usize,
    pub metadata: Vec<(String, f64)>,
}

impl<S> FitReport<S> {
    pub(crate) fn empty(state: S, metadata: Vec<(String, f64)>) -> Self {
        Self {
            final_state: state,
            elbo_trace: Vec::new(),
            heldout_trace: Vec::new(),
            converged: false,
            iterations_run: 0,
            metadata,
        }
    }

    /// Last recorded ELBO.
    pub fn final_elbo(&self) -> Option<f64> {
        self.elbo_trace.last().map(|p| p.elbo)
    }

    /// Held-out value recorded at `iter`, if any.
    pub fn heldout_at(&self, iter: usize) -> Option<f64> {
        self.heldout_trace
            .iter()
            .find(|h| h.iter == iter)
            .map(|h| h.log_predictive)
    }

    pub fn map_state<T>(self, f: impl FnOnce(S) -> T) -> FitReport<T> {
        FitReport {
            final_state: f(self.final_state),
            elbo_trace: self.elbo_trace,
            heldout_trace: self.heldout_trace,
            converged: self.converged,
            iterations_run: self.iterations_run,
            metadata: self.metadata,
        }
    }
}

/// Relative ELBO change used as the stopping rule.
pub fn relative_change(previous: f64, current: f64) -> f64 {
    (current - previous).abs() / (1.0 + current.abs())
}

pub fn init_state<M: CaviModel>(
    model: &M,
    data: &M::Data,
    strategy: InitStrategy,
    seed: u64,
) -> Result<M::State> {
    model.init_state(data, strategy, seed)
}

pub fn compute_elbo<M: CaviModel>(model: &M, state: &M::State, data: &M::Data) -> Result<f64> {
    let v = model.elbo(state, data)?;
    ensure_finite(v, "ELBO")
}

pub fn heldout_log_predictive<M: CaviModel>(
    model: &M,
    state: &M::State,
    heldout: &M::Data,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::domain("held-out set is empty"));
    }
    let v = model.heldout_log_predictive(state, heldout)?;
    ensure_finite(v, "held-out log predictive")
}

/// Coordinate ascent until the relative ELBO change drops below
/// `config.tol` or `config.max_iters` sweeps have run.
///
/// The ELBO is evaluated at iteration 0 and then every `elbo_every` sweeps
/// (and always after the last one). A drop larger than
/// `ELBO_SLACK · (1 + |previous|)` is reported as [`Error::ElboDecrease`].
pub fn cavi_fit<M: CaviModel>(
    model: &M,
    data: &M::Data,
    heldout: Option<&M::Data>,
    config: &FitConfig,
    init: M::State,
    clock: &dyn Clock,
) -> Result<FitReport<M::State>> {
    config.validate()?;
    let heldout = heldout.filter(|h| !h.is_empty());
    let mut report = FitReport::empty(init, model.metadata());

    let record = |report: &mut FitReport<M::State>, it: usize| -> Result<f64> {
        let elbo = compute_elbo(model, &report.final_state, data).map_err(|e| e.at_iteration(it))?;
        report.elbo_trace.push(TracePoint {
            iter: it,
            elbo,
            elapsed_ms: clock.elapsed_ms(),
        });
        if let Some(h) = heldout {
            let lp = heldout_log_predictive(model, &report.final_state, h)
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
        model
            .sweep(&mut report.final_state, data)
            .map_err(|e| e.at_iteration(it))?;
        report.iterations_run = it;
        if it % config.elbo_every != 0 && it != config.max_iters {
            continue;
        }
        let current = record(&mut report, it)?;
        if current < previous - ELBO_SLACK * (1.0 + previous.abs()) {
            return Err(Error::ElboDecrease {
                iteration: it,
                previous,
                current,
            });
        }
        if relative_change(previous, current) < config.tol {
            report.converged = true;
            break;
        }
        previous = current;
    }
    Ok(report)
}

/// Largest ELBO increase obtainable by shifting any single canonical
/// parameter of `state` by ±`delta`. At a coordinate-ascent fixed point this
/// is nonpositive up to rounding.
pub fn max_perturbation_gain<M>(model: &M, state: &M::State, data: &M::Data, delta: f64) -> Result<f64>
where
    M: CaviModel,
    M::State: Perturb,
{
    let base = compute_elbo(model, state, data)?;
    let mut best = f64::NEG_INFINITY;
    for idx in 0..state.param_count() {
        for d in [delta, -delta] {
            if let Some(p) = state.perturbed(idx, d) {
                let v = compute_elbo(model, &p, data)?;
                best = best.max(v - base);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_names_field() {
        let mut c = FitConfig::default();
        assert!(c.validate().is_ok());
        c.tol = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config { field: "tol", .. })));
        c = FitConfig {
            heldout_fraction: 0.7,
            ..FitConfig::default()
        };
        assert!(matches!(
            c.validate(),
            Err(Error::Config {
                field: "heldout_fraction",
                ..
            })
        ));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("prior".parse::<InitStrategy>().unwrap(), InitStrategy::Prior);
        assert_eq!(
            "data_calibrated".parse::<InitStrategy>().unwrap(),
            InitStrategy::DataCalibrated
        );
        assert!(matches!(
            "kmeans".parse::<InitStrategy>(),
            Err(Error::Config { field: "init", .. })
        ));
    }

    #[test]
    fn meanfield_state_keeps_families() {
        let mut s = MeanFieldState::new();
        s.push("mu", ExpFamParam::gaussian(0.0, 1.0).unwrap());
        assert!(s.set(0, ExpFamParam::gamma(1.0, 1.0).unwrap()).is_err());
        assert!(s.set(0, ExpFamParam::gaussian(2.0, 1.0).unwrap()).is_ok());
        assert_eq!(s.get("mu").unwrap().params(), &[2.0, 1.0]);
        assert_eq!(s.param_count(), 2);
        assert!(s.perturbed(1, -2.0).is_none());
    }
}
