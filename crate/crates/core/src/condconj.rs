//! Conditionally conjugate global/local models and stochastic variational
//! inference on top of them.
//!
//! A model has global latents β with a conjugate prior of natural parameter
//! α = [α₁, α₂] and per-context local latents z_i. The global variational
//! factor is carried as a [`GlobalNatural`] in the same coordinates as α, so
//! the coordinate update is λ = [α₁ + Σ_i E_{φ_i}[t(z_i, x_i)], α₂ + n] and the
//! natural gradient is that update minus λ.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::engine::{relative_change, Clock, FitConfig, FitReport, HeldoutPoint, TracePoint};
use crate::error::ensure_finite;
use crate::mathf;
use crate::{Error, Result};

/// Global parameter in conjugate natural coordinates: the statistic block
/// (paired with β) and the count block (paired with −a(β)).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalNatural {
    pub stats: Vec<f64>,
    pub count: f64,
}

impl GlobalNatural {
    pub fn new(stats: Vec<f64>, count: f64) -> Self {
        Self { stats, count }
    }

    /// Length of the flattened vector `[stats.., count]`.
    pub fn dim(&self) -> usize {
        self.stats.len() + 1
    }

    /// Flattened `[stats.., count]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.stats.clone();
        v.push(self.count);
        v
    }

    /// `(1 − ε)·self + ε·target`.
    pub fn blend(&self, target: &GlobalNatural, eps: f64) -> GlobalNatural {
        GlobalNatural {
            stats: self
                .stats
                .iter()
                .zip(&target.stats)
                .map(|(a, b)| (1.0 - eps) * a + eps * b)
                .collect(),
            count: (1.0 - eps) * self.count + eps * target.count,
        }
    }

    fn is_finite(&self) -> bool {
        self.count.is_finite() && self.stats.iter().all(|v| v.is_finite())
    }
}

/// The contract a conditionally conjugate model fulfills.
pub trait ConditionallyConjugate {
    type Data: Dataset;
    /// Variational parameter of one local context.
    type Local: Clone;
    /// Expectations under q(β; λ) needed by the local step.
    type Expectations;

    /// Prior natural parameter α.
    fn prior(&self) -> &GlobalNatural;

    /// E_λ[·] bundle consumed by [`local_step`](Self::local_step). Must be a
    /// pure function of λ.
    fn expectations(&self, lambda: &GlobalNatural) -> Result<Self::Expectations>;

    /// φ_i = E_λ[η(β, x_i)] for context `i` (0-based).
    fn local_step(&self, expect: &Self::Expectations, data: &Self::Data, i: usize) -> Result<Self::Local>;

    /// Adds `scale · E_φ[t(z_i, x_i)]` into `out` (length of `prior().stats`).
    fn add_suff_stat(&self, local: &Self::Local, data: &Self::Data, i: usize, scale: f64, out: &mut [f64]);

    /// Rejects λ outside the natural parameter space.
    fn check_global(&self, lambda: &GlobalNatural) -> Result<()>;

    /// Full-data ELBO at λ with every local factor set to its optimum.
    fn elbo_at(&self, lambda: &GlobalNatural, data: &Self::Data) -> Result<f64>;

    /// Mean approximate log predictive of held-out contexts under λ.
    fn heldout_log_predictive(&self, lambda: &GlobalNatural, heldout: &Self::Data) -> Result<f64>;
}

/// ELBO ingredients for models whose local base measure h(z_i, x_i) does
/// not depend on z_i, so the conditionally-conjugate ELBO expression is exact
/// up to a constant.
pub trait ConjugateElbo: ConditionallyConjugate {
    /// (E_λ[β] aligned with the statistic block, E_λ[a(β)]).
    fn expected_global(&self, lambda: &GlobalNatural) -> Result<(Vec<f64>, f64)>;

    /// λᵀE_λ[t(β)] − a(λ).
    fn global_log_q(&self, lambda: &GlobalNatural) -> Result<f64>;

    /// φᵀE_φ[z] − a(φ).
    fn local_log_q(&self, local: &Self::Local) -> f64;

    /// The terms dropped by [`cond_conj_elbo`] that depend only on the data
    /// and hyperparameters.
    fn elbo_offset(&self, data: &Self::Data) -> f64;
}

/// λ together with one local parameter per context.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalLocalState<L> {
    pub lambda: GlobalNatural,
    pub phis: Vec<L>,
}

/// φ_i = E_λ[η(β, x_i)].
pub fn local_step<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
    i: usize,
) -> Result<M::Local> {
    check_index(i, data.len())?;
    let e = model.expectations(lambda)?;
    model.local_step(&e, data, i)
}

/// Optimal local parameters for every context at fixed λ.
pub fn local_steps<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
) -> Result<Vec<M::Local>> {
    let e = model.expectations(lambda)?;
    (0..data.len()).map(|i| model.local_step(&e, data, i)).collect()
}

/// λ = [α₁ + Σ_i E_{φ_i}[t(z_i, x_i)], α₂ + n].
pub fn global_step<M: ConditionallyConjugate>(
    model: &M,
    phis: &[M::Local],
    data: &M::Data,
) -> Result<GlobalNatural> {
    if phis.len() != data.len() {
        return Err(Error::domain("one local parameter per data point is required"));
    }
    let alpha = model.prior();
    let mut stats = alpha.stats.clone();
    for (i, phi) in phis.iter().enumerate() {
        model.add_suff_stat(phi, data, i, 1.0, &mut stats);
    }
    Ok(GlobalNatural::new(stats, alpha.count + phis.len() as f64))
}

/// g(λ) = coordinate update − λ, componentwise in natural coordinates.
pub fn natural_gradient(lambda: &GlobalNatural, coordinate_update: &GlobalNatural) -> Result<Vec<f64>> {
    if lambda.stats.len() != coordinate_update.stats.len() {
        return Err(Error::domain("natural gradient across mismatched parameter shapes"));
    }
    let mut g: Vec<f64> = coordinate_update
        .stats
        .iter()
        .zip(&lambda.stats)
        .map(|(u, l)| u - l)
        .collect();
    g.push(coordinate_update.count - lambda.count);
    Ok(g)
}

/// Exact natural gradient at λ with all locals optimized.
pub fn full_natural_gradient<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
) -> Result<Vec<f64>> {
    let phis = local_steps(model, lambda, data)?;
    natural_gradient(lambda, &global_step(model, &phis, data)?)
}

/// The coordinate update computed as though the listed contexts were the
/// whole dataset, rescaled by n/B: [α₁ + (n/B) Σ_b E[t(z_b, x_b)], α₂ + n].
pub fn replicated_update<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
    batch: &[usize],
) -> Result<GlobalNatural> {
    let n = data.len();
    if batch.is_empty() {
        return Err(Error::domain("empty minibatch"));
    }
    for &i in batch {
        check_index(i, n)?;
    }
    let e = model.expectations(lambda)?;
    let alpha = model.prior();
    let scale = n as f64 / batch.len() as f64;
    let mut stats = alpha.stats.clone();
    for &i in batch {
        let phi = model.local_step(&e, data, i)?;
        model.add_suff_stat(&phi, data, i, scale, &mut stats);
    }
    Ok(GlobalNatural::new(stats, alpha.count + n as f64))
}

/// ĝ(λ) = α + n·[E_{φ*_t}[t(z_t, x_t)], 1] − λ for the context at 0-based
/// index `t`.
pub fn noisy_natural_gradient<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
    t: usize,
) -> Result<Vec<f64>> {
    minibatch_natural_gradient(model, lambda, data, &[t])
}

/// Minibatch version of [`noisy_natural_gradient`] with rescale n/B.
pub fn minibatch_natural_gradient<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
    batch: &[usize],
) -> Result<Vec<f64>> {
    natural_gradient(lambda, &replicated_update(model, lambda, data, batch)?)
}

/// Conditionally-conjugate ELBO
/// (α₁ + Σ E[t])ᵀE[β] − (α₂ + n)E[a(β)] − E[log q(β, z)],
/// which omits [`ConjugateElbo::elbo_offset`].
pub fn cond_conj_elbo<M: ConjugateElbo>(
    model: &M,
    state: &GlobalLocalState<M::Local>,
    data: &M::Data,
) -> Result<f64> {
    let coord = global_step(model, &state.phis, data)?;
    let (e_beta, e_a) = model.expected_global(&state.lambda)?;
    let linear: f64 = coord.stats.iter().zip(&e_beta).map(|(a, b)| a * b).sum();
    let log_q_local: f64 = state.phis.iter().map(|p| model.local_log_q(p)).sum();
    let v = linear - coord.count * e_a - model.global_log_q(&state.lambda)? - log_q_local;
    ensure_finite(v, "ELBO")
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::Domain(alloc::format!("data index {i} out of range for {n} points")))
    }
}

/// Robbins-Monro step sizes ε_t = scale·(t + delay)^(−κ) with κ ∈ (0.5, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    kappa: f64,
    delay: f64,
    scale: f64,
}

impl StepSchedule {
    pub fn new(kappa: f64, delay: f64, scale: f64) -> Result<Self> {
        if !(kappa > 0.5 && kappa <= 1.0) {
            return Err(Error::config("kappa", "must lie in (0.5, 1]"));
        }
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(Error::config("delay", "must be finite and >= 0"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config("scale", "must be finite and > 0"));
        }
        Ok(Self { kappa, delay, scale })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// ε_t for t ≥ 1.
    pub fn step_size(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        self.scale * mathf::powf(t + self.delay, -self.kappa)
    }
}

/// SVI knobs beyond [`FitConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SviSettings {
    pub schedule: StepSchedule,
    pub batch_size: usize,
}

/// One SVI update: λ ← (1 − ε)λ + ε λ̂ with λ̂ from [`replicated_update`].
pub fn svi_iteration<M: ConditionallyConjugate>(
    model: &M,
    lambda: &GlobalNatural,
    data: &M::Data,
    batch: &[usize],
    eps: f64,
) -> Result<GlobalNatural> {
    let target = replicated_update(model, lambda, data, batch)?;
    let next = lambda.blend(&target, eps);
    if !next.is_finite() {
        return Err(Error::non_finite("global parameter"));
    }
    model.check_global(&next)?;
    Ok(next)
}

/// Stochastic variational inference. Each iteration samples a minibatch
/// uniformly without replacement, optimizes its local parameters at the
/// current λ, and blends λ toward the replicated coordinate update. The full
/// ELBO (locals re-optimized at λ_t) is recorded at iteration 0 and every
/// `elbo_every` iterations.
pub fn svi_fit<M: ConditionallyConjugate>(
    model: &M,
    data: &M::Data,
    heldout: Option<&M::Data>,
    settings: &SviSettings,
    config: &FitConfig,
    init: GlobalNatural,
    clock: &dyn Clock,
) -> Result<FitReport<GlobalNatural>> {
    config.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::domain("SVI needs a nonempty dataset"));
    }
    if settings.batch_size == 0 || settings.batch_size > n {
        return Err(Error::config("batch", "must lie in [1, n]"));
    }
    model.check_global(&init)?;
    let heldout = heldout.filter(|h| !h.is_empty());
    let metadata = alloc::vec![
        (String::from("kappa"), settings.schedule.kappa()),
        (String::from("delay"), settings.schedule.delay()),
        (String::from("scale"), settings.schedule.scale()),
        (String::from("batch"), settings.batch_size as f64),
    ];
    let mut report = FitReport::empty(init, metadata);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let record = |report: &mut FitReport<GlobalNatural>, it: usize| -> Result<f64> {
        let elbo = model
            .elbo_at(&report.final_state, data)
            .and_then(|v| ensure_finite(v, "ELBO"))
            .map_err(|e| e.at_iteration(it))?;
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
        report.final_state = svi_iteration(model, &report.final_state, data, &batch, eps)
            .map_err(|e| e.at_iteration(it))?;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = StepSchedule::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(s.step_size(4), 0.25);
        assert_eq!(s.step_size(1), 1.0);
        assert!(StepSchedule::new(0.5, 0.0, 1.0).is_err());
        assert!(StepSchedule::new(0.5 + 1e-9, 0.0, 1.0).is_ok());
        assert!(StepSchedule::new(1.1, 0.0, 1.0).is_err());
        assert!(StepSchedule::new(0.7, -1.0, 1.0).is_err());
        assert!(StepSchedule::new(0.7, 0.0, 0.0).is_err());
        let s = StepSchedule::new(0.7, 3.0, 2.0).unwrap();
        for t in 1..100 {
            let e = s.step_size(t);
            assert!(e > 0.0 && e <= 2.0);
        }
    }

    #[test]
    fn schedule_robbins_monro_partial_sums() {
        // For ε_t = t^−κ: Σ_{t≤T} ε_t ≥ ∫_1^{T+1} x^−κ dx (diverges) and
        // Σ_{t>T} ε_t² ≤ T^{1−2κ}/(2κ − 1) (tail of a convergent series).
        for kappa in [0.51, 0.7, 1.0] {
            let s = StepSchedule::new(kappa, 0.0, 1.0).unwrap();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut checkpoints = alloc::vec![];
            for t in 1..=1_000_000usize {
                let e = s.step_size(t);
                sum += e;
                sum_sq += e * e;
                if t == 1_000 || t == 1_000_000 {
                    checkpoints.push((t as f64, sum, sum_sq));
                }
            }
            for &(t, s1, s2) in &checkpoints {
                let lower = if kappa == 1.0 {
                    (t + 1.0).ln()
                } else {
                    ((t + 1.0).powf(1.0 - kappa) - 1.0) / (1.0 - kappa)
                };
                assert!(s1 >= lower, "partial sum below its divergent lower bound");
                let limit_upper = s2 + t.powf(1.0 - 2.0 * kappa) / (2.0 * kappa - 1.0);
                // ζ(2κ) bounds the full square sum: Σ t^−2κ ≤ 1 + 1/(2κ − 1).
                assert!(limit_upper <= 1.0 + 1.0 / (2.0 * kappa - 1.0) + 1e-9);
            }
            let (_, a, _) = checkpoints[0];
            let (_, b, _) = checkpoints[1];
            assert!(b > a + 1.0, "partial sums keep growing");
        }
    }

    #[test]
    fn natural_gradient_examples() {
        let lam = GlobalNatural::new(alloc::vec![1.0, -2.0], 3.0);
        assert_eq!(natural_gradient(&lam, &lam).unwrap(), alloc::vec![0.0; 3]);
        let zero = GlobalNatural::new(alloc::vec![0.0, 0.0], 0.0);
        assert_eq!(natural_gradient(&zero, &lam).unwrap(), lam.to_vec());
        let up = GlobalNatural::new(alloc::vec![2.0, -2.0], 3.0);
        assert!(natural_gradient(&lam, &up).unwrap()[0] > 0.0);
        let bad = GlobalNatural::new(alloc::vec![1.0], 3.0);
        assert!(natural_gradient(&lam, &bad).is_err());
    }

    #[test]
    fn blend_is_convex_combination() {
        let a = GlobalNatural::new(alloc::vec![0.0, 4.0], 1.0);
        let b = GlobalNatural::new(alloc::vec![2.0, 0.0], 3.0);
        assert_eq!(a.blend(&b, 1.0), b);
        assert_eq!(a.blend(&b, 0.0), a);
        assert_eq!(a.blend(&b, 0.5).to_vec(), alloc::vec![1.0, 2.0, 2.0]);
    }
}
