//! Latent Dirichlet allocation.
//!
//! Topics β_k ~ Dirichlet(η·1_V), proportions θ_d ~ Dirichlet(α), and each
//! token draws a topic from θ_d and a word from that topic. Variational
//! factors: q(β_k) = Dirichlet(λ_k), q(θ_d) = Dirichlet(γ_d) and one
//! categorical φ row per distinct (document, term) pair, shared by every
//! occurrence of the term.

mod corpus;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condconj::{svi_fit, ConditionallyConjugate, GlobalNatural, SviSettings};
use crate::data::Dataset;
use crate::engine::{CaviModel, Clock, FitConfig, FitReport, InitStrategy};
use crate::error::ensure_finite;
use crate::expfam::{dirichlet_elog_unchecked, ln_gamma, lse, normalize_log_weights};
use crate::mathf;
use crate::{Error, Result};

pub use corpus::{synthetic_corpus, Corpus, SyntheticCorpus, SyntheticCorpusConfig};

/// The per-document loop stops once the mean absolute change of γ_d drops
/// below this.
pub const INNER_TOL: f64 = 1e-4;
pub const INNER_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    pub k: usize,
    pub eta: f64,
    pub alpha: Vec<f64>,
}

impl LdaConfig {
    pub fn symmetric(k: usize, eta: f64, alpha: f64) -> Self {
        Self {
            k,
            eta,
            alpha: alloc::vec![alpha; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", "must be finite and > 0"));
        }
        if self.alpha.len() != self.k {
            return Err(Error::config("alpha", "needs one entry per topic"));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::config("alpha", "entries must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaState {
    k: usize,
    v: usize,
    /// `k × v`.
    pub lambda: Vec<f64>,
    /// `docs × k`.
    pub gamma: Vec<f64>,
    /// Per document, one K-row per distinct term in corpus order.
    pub phi: Vec<Vec<f64>>,
}

impl LdaState {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn lambda_row(&self, k: usize) -> &[f64] {
        &self.lambda[k * self.v..(k + 1) * self.v]
    }

    pub fn gamma_row(&self, d: usize) -> &[f64] {
        &self.gamma[d * self.k..(d + 1) * self.k]
    }

    /// E[β_k] = λ_k / Σ_v λ_kv.
    pub fn topic_means(&self) -> Vec<f64> {
        let mut out = self.lambda.clone();
        for row in out.chunks_exact_mut(self.v) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        out
    }

    /// The `n` highest-weight terms of topic `k` with their E[β_kv].
    pub fn top_terms(&self, k: usize, n: usize) -> Vec<(usize, f64)> {
        let row = self.lambda_row(k);
        let total: f64 = row.iter().sum();
        let mut idx: Vec<usize> = (0..self.v).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|w| (w, row[w] / total)).collect()
    }
}

/// E[ln β_kv] for every topic and term.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicExpectations {
    v: usize,
    elog_beta: Vec<f64>,
}

impl TopicExpectations {
    pub fn new(lambda: &[f64], v: usize) -> Self {
        let elog_beta = lambda.chunks_exact(v).flat_map(dirichlet_elog_unchecked).collect();
        Self { v, elog_beta }
    }

    fn get(&self, k: usize, w: u32) -> f64 {
        self.elog_beta[k * self.v + w as usize]
    }
}

/// Variational parameters of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocLocal {
    pub phi: Vec<f64>,
    pub gamma: Vec<f64>,
}

fn phi_rows(doc: &[(u32, u32)], gamma: &[f64], topics: &TopicExpectations, out: &mut [f64]) {
    let k = gamma.len();
    let elog_theta = dirichlet_elog_unchecked(gamma);
    for (j, &(w, _)) in doc.iter().enumerate() {
        let row = &mut out[j * k..(j + 1) * k];
        for (t, r) in row.iter_mut().enumerate() {
            *r = elog_theta[t] + topics.get(t, w);
        }
        normalize_log_weights(row);
    }
}

fn gamma_from_phi(doc: &[(u32, u32)], phi: &[f64], alpha: &[f64], out: &mut [f64]) {
    let k = alpha.len();
    out.copy_from_slice(alpha);
    for (j, &(_, c)) in doc.iter().enumerate() {
        for t in 0..k {
            out[t] += c as f64 * phi[j * k + t];
        }
    }
}

/// φ_dw ∝ exp(E[ln θ_d] + E[ln β_·w]) for every distinct term of document `d`.
pub fn update_phi(state: &mut LdaState, corpus: &Corpus, d: usize, topics: &TopicExpectations) {
    let k = state.k;
    let gamma = state.gamma[d * k..(d + 1) * k].to_vec();
    phi_rows(corpus.doc(d), &gamma, topics, &mut state.phi[d]);
}

/// γ_d = α + Σ_w n_dw φ_dw.
pub fn update_gamma(state: &mut LdaState, corpus: &Corpus, d: usize, config: &LdaConfig) {
    let k = state.k;
    gamma_from_phi(corpus.doc(d), &state.phi[d], &config.alpha, &mut state.gamma[d * k..(d + 1) * k]);
}

/// λ_kv = η + Σ_d n_dv φ_dv^k.
pub fn update_lambda(state: &mut LdaState, corpus: &Corpus, config: &LdaConfig) {
    let (k, v) = (state.k, state.v);
    state.lambda.iter_mut().for_each(|l| *l = config.eta);
    for (doc, phi) in corpus.docs().iter().zip(&state.phi) {
        for (j, &(w, c)) in doc.iter().enumerate() {
            for t in 0..k {
                state.lambda[t * v + w as usize] += c as f64 * phi[j * k + t];
            }
        }
    }
}

/// Alternates φ and γ for one document at fixed topics until the mean
/// absolute change in γ falls below [`INNER_TOL`] or [`INNER_MAX_ITERS`]
/// passes have run. Starts from the supplied γ.
pub fn infer_document(
    doc: &[(u32, u32)],
    gamma: &mut [f64],
    phi: &mut [f64],
    topics: &TopicExpectations,
    config: &LdaConfig,
) {
    let k = config.k;
    let mut next = alloc::vec![0.0; k];
    for _ in 0..INNER_MAX_ITERS {
        phi_rows(doc, gamma, topics, phi);
        gamma_from_phi(doc, phi, &config.alpha, &mut next);
        let change: f64 = next.iter().zip(gamma.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        gamma.copy_from_slice(&next);
        if change < INNER_TOL {
            break;
        }
    }
}

/// γ_d = α + N_d/K, the usual starting point for a fresh document.
fn initial_gamma(config: &LdaConfig, doc_len: f64) -> Vec<f64> {
    config.alpha.iter().map(|a| a + doc_len / config.k as f64).collect()
}

fn fresh_local(doc: &[(u32, u32)], doc_len: f64, topics: &TopicExpectations, config: &LdaConfig) -> DocLocal {
    let mut gamma = initial_gamma(config, doc_len);
    let mut phi = alloc::vec![1.0 / config.k as f64; doc.len() * config.k];
    infer_document(doc, &mut gamma, &mut phi, topics, config);
    DocLocal { phi, gamma }
}

fn ln_dirichlet_norm(conc: &[f64]) -> f64 {
    conc.iter().map(|&c| ln_gamma(c)).sum::<f64>() - ln_gamma(conc.iter().sum())
}

/// Per-document ELBO terms: Σ_w n_w Σ_k φ (E ln θ + E ln β − ln φ) plus
/// E[ln p(θ)] − E[ln q(θ)].
fn doc_elbo(doc: &[(u32, u32)], local_phi: &[f64], gamma: &[f64], topics: &TopicExpectations, config: &LdaConfig) -> f64 {
    let k = config.k;
    let elog_theta = dirichlet_elog_unchecked(gamma);
    let mut acc = 0.0;
    for (j, &(w, c)) in doc.iter().enumerate() {
        for t in 0..k {
            let p = local_phi[j * k + t];
            if p > 0.0 {
                acc += c as f64 * p * (elog_theta[t] + topics.get(t, w) - mathf::ln(p));
            }
        }
    }
    acc -= ln_dirichlet_norm(&config.alpha);
    acc += ln_dirichlet_norm(gamma);
    for t in 0..k {
        acc += (config.alpha[t] - gamma[t]) * elog_theta[t];
    }
    acc
}

/// Σ_k (E[ln p(β_k)] − E[ln q(β_k)]).
fn topic_elbo(lambda: &[f64], v: usize, topics: &TopicExpectations, eta: f64) -> f64 {
    let prior_norm = v as f64 * ln_gamma(eta) - ln_gamma(v as f64 * eta);
    let mut acc = 0.0;
    for (k, row) in lambda.chunks_exact(v).enumerate() {
        acc += ln_dirichlet_norm(row) - prior_norm;
        for (w, &l) in row.iter().enumerate() {
            acc += (eta - l) * topics.elog_beta[k * v + w];
        }
    }
    acc
}

/// Average per-word log predictive of `heldout` with topics frozen at λ:
/// each document's γ is inferred from scratch, then every token scores
/// ln Σ_k E[θ_dk] E[β_kw].
pub fn heldout_per_word(lambda: &[f64], v: usize, heldout: &Corpus, config: &LdaConfig) -> Result<f64> {
    if heldout.vocab_size() != v {
        return Err(Error::domain("held-out vocabulary differs from the fitted topics"));
    }
    let tokens = heldout.total_tokens();
    if !(tokens > 0.0) {
        return Err(Error::domain("held-out set has no tokens"));
    }
    let k = config.k;
    let topics = TopicExpectations::new(lambda, v);
    let ln_beta: Vec<f64> = lambda
        .chunks_exact(v)
        .flat_map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(move |l| mathf::ln(l / total))
        })
        .collect();
    let mut total = 0.0;
    let mut terms = alloc::vec![0.0; k];
    for (d, doc) in heldout.docs().iter().enumerate() {
        let local = fresh_local(doc, heldout.doc_len(d), &topics, config);
        let gsum: f64 = local.gamma.iter().sum();
        for &(w, c) in doc {
            for t in 0..k {
                terms[t] = mathf::ln(local.gamma[t] / gsum) + ln_beta[t * v + w as usize];
            }
            total += c as f64 * lse(&terms);
        }
    }
    ensure_finite(total / tokens, "held-out log predictive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    config: LdaConfig,
    v: usize,
    prior: GlobalNatural,
}

impl Lda {
    pub fn new(config: LdaConfig, v: usize) -> Result<Self> {
        config.validate()?;
        if v == 0 {
            return Err(Error::config("v", "must be >= 1"));
        }
        let prior = GlobalNatural::new(alloc::vec![config.eta; config.k * v], 0.0);
        Ok(Self { config, v, prior })
    }

    pub fn config(&self) -> &LdaConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    fn check(&self, corpus: &Corpus) -> Result<()> {
        if corpus.vocab_size() != self.v {
            return Err(Error::domain("corpus vocabulary differs from the model"));
        }
        Ok(())
    }

    /// State with the given topics and fresh per-document inference.
    pub fn state_from_lambda(&self, lambda: Vec<f64>, corpus: &Corpus) -> Result<LdaState> {
        self.check(corpus)?;
        self.check_global(&GlobalNatural::new(lambda.clone(), 0.0))?;
        let topics = TopicExpectations::new(&lambda, self.v);
        let mut gamma = Vec::with_capacity(corpus.len() * self.config.k);
        let mut phi = Vec::with_capacity(corpus.len());
        for (d, doc) in corpus.docs().iter().enumerate() {
            let local = fresh_local(doc, corpus.doc_len(d), &topics, &self.config);
            gamma.extend(local.gamma);
            phi.push(local.phi);
        }
        Ok(LdaState {
            k: self.config.k,
            v: self.v,
            lambda,
            gamma,
            phi,
        })
    }

    fn elbo_of(&self, state: &LdaState, corpus: &Corpus) -> Result<f64> {
        self.check(corpus)?;
        let k = self.config.k;
        if state.gamma.len() != corpus.len() * k || state.phi.len() != corpus.len() {
            return Err(Error::domain("state does not match the corpus"));
        }
        let topics = TopicExpectations::new(&state.lambda, self.v);
        let mut elbo = topic_elbo(&state.lambda, self.v, &topics, self.config.eta);
        for (d, doc) in corpus.docs().iter().enumerate() {
            elbo += doc_elbo(doc, &state.phi[d], state.gamma_row(d), &topics, &self.config);
        }
        ensure_finite(elbo, "ELBO")
    }
}

impl CaviModel for Lda {
    type Data = Corpus;
    type State = LdaState;

    /// `Prior`: λ = η exactly (a symmetric saddle when K > 1).
    /// `DataCalibrated`: λ_kv = η + u_kv · 0.01 · tokens / (KV) with
    /// u_kv ~ Uniform(0, 1). In both cases γ_d = α + N_d/K and φ is uniform.
    fn init_state(&self, corpus: &Corpus, strategy: InitStrategy, seed: u64) -> Result<LdaState> {
        self.check(corpus)?;
        let (k, v) = (self.config.k, self.v);
        let mut lambda = alloc::vec![self.config.eta; k * v];
        if strategy == InitStrategy::DataCalibrated {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 0.01 * corpus.total_tokens() / (k * v) as f64;
            for l in lambda.iter_mut() {
                *l += scale * rng.random::<f64>();
            }
        }
        let gamma = (0..corpus.len())
            .flat_map(|d| initial_gamma(&self.config, corpus.doc_len(d)))
            .collect();
        let phi = corpus
            .docs()
            .iter()
            .map(|doc| alloc::vec![1.0 / k as f64; doc.len() * k])
            .collect();
        Ok(LdaState {
            k,
            v,
            lambda,
            gamma,
            phi,
        })
    }

    /// Inner φ/γ loop per document, warm-started from the current γ, then
    /// the topic update.
    fn sweep(&self, state: &mut LdaState, corpus: &Corpus) -> Result<()> {
        self.check(corpus)?;
        let k = self.config.k;
        let topics = TopicExpectations::new(&state.lambda, self.v);
        for (d, doc) in corpus.docs().iter().enumerate() {
            infer_document(
                doc,
                &mut state.gamma[d * k..(d + 1) * k],
                &mut state.phi[d],
                &topics,
                &self.config,
            );
        }
        update_lambda(state, corpus, &self.config);
        if state.lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::non_finite("topic parameters"));
        }
        Ok(())
    }

    fn elbo(&self, state: &LdaState, corpus: &Corpus) -> Result<f64> {
        self.elbo_of(state, corpus)
    }

    fn heldout_log_predictive(&self, state: &LdaState, heldout: &Corpus) -> Result<f64> {
        heldout_per_word(&state.lambda, self.v, heldout, &self.config)
    }

    fn metadata(&self) -> Vec<(String, f64)> {
        let mut m = alloc::vec![
            (String::from("k"), self.config.k as f64),
            (String::from("eta"), self.config.eta),
            (String::from("v"), self.v as f64),
        ];
        m.extend(
            self.config
                .alpha
                .iter()
                .enumerate()
                .map(|(i, a)| (alloc::format!("alpha[{i}]"), *a)),
        );
        m
    }
}

/// λ is stored as Dirichlet concentrations (natural parameter + 1); the
/// count block is unused.
impl ConditionallyConjugate for Lda {
    type Data = Corpus;
    type Local = DocLocal;
    type Expectations = TopicExpectations;

    fn prior(&self) -> &GlobalNatural {
        &self.prior
    }

    fn expectations(&self, lambda: &GlobalNatural) -> Result<TopicExpectations> {
        self.check_global(lambda)?;
        Ok(TopicExpectations::new(&lambda.stats, self.v))
    }

    fn local_step(&self, topics: &TopicExpectations, corpus: &Corpus, i: usize) -> Result<DocLocal> {
        Ok(fresh_local(corpus.doc(i), corpus.doc_len(i), topics, &self.config))
    }

    fn add_suff_stat(&self, local: &DocLocal, corpus: &Corpus, i: usize, scale: f64, out: &mut [f64]) {
        let k = self.config.k;
        for (j, &(w, c)) in corpus.doc(i).iter().enumerate() {
            for t in 0..k {
                out[t * self.v + w as usize] += scale * c as f64 * local.phi[j * k + t];
            }
        }
    }

    fn check_global(&self, lambda: &GlobalNatural) -> Result<()> {
        if lambda.stats.len() != self.config.k * self.v {
            return Err(Error::domain("topic parameter has the wrong length"));
        }
        if let Some(&l) = lambda.stats.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter {
                quantity: "lambda",
                value: l,
                iteration: None,
            });
        }
        Ok(())
    }

    fn elbo_at(&self, lambda: &GlobalNatural, corpus: &Corpus) -> Result<f64> {
        let state = self.state_from_lambda(lambda.stats.clone(), corpus)?;
        self.elbo_of(&state, corpus)
    }

    fn heldout_log_predictive(&self, lambda: &GlobalNatural, heldout: &Corpus) -> Result<f64> {
        heldout_per_word(&lambda.stats, self.v, heldout, &self.config)
    }
}

/// Stochastic variational inference for LDA. Each step samples documents,
/// runs their inner loops from scratch at the current topics and blends λ
/// toward η + (D/B) Σ_b n_bw φ_bw. The final state carries fresh
/// per-document inference at the final λ.
pub fn lda_svi_fit(
    model: &Lda,
    corpus: &Corpus,
    heldout: Option<&Corpus>,
    settings: &SviSettings,
    config: &FitConfig,
    init: &LdaState,
    clock: &dyn Clock,
) -> Result<FitReport<LdaState>> {
    model.check(corpus)?;
    let report = svi_fit(
        model,
        corpus,
        heldout,
        settings,
        config,
        GlobalNatural::new(init.lambda.clone(), 0.0),
        clock,
    )?;
    let state = model.state_from_lambda(report.final_state.stats.clone(), corpus)?;
    let mut metadata = model.metadata();
    metadata.extend(report.metadata.iter().cloned());
    let mut out = report.map_state(|_| state);
    out.metadata = metadata;
    Ok(out)
}
