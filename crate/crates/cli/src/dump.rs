//! JSON documents written by `fit` and `simulate` and read back by `eval`.

use serde::{Deserialize, Serialize};

/// Run facts shared by every fitted-model dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub algorithm: String,
    pub init: String,
    pub final_elbo: f64,
    pub converged: bool,
    pub iterations_run: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    /// Last recorded held-out average log predictive, if monitored.
    pub heldout_log_predictive: Option<f64>,
    pub trace_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaDump {
    pub mean: f64,
    pub scale: f64,
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopTerm {
    /// 1-based, as in the corpus file.
    pub term: usize,
    pub weight: f64,
}

/// Matrices are flattened row-major: `means` and `variances` are `k × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum FitDump {
    Gmm {
        #[serde(flatten)]
        run: RunInfo,
        k: usize,
        dim: usize,
        sigma2: f64,
        means: Vec<f64>,
        variances: Vec<f64>,
        responsibilities_path: String,
    },
    GmmDiag {
        #[serde(flatten)]
        run: RunInfo,
        k: usize,
        dim: usize,
        a0: f64,
        m0: f64,
        b0: f64,
        alpha0: f64,
        beta0: f64,
        /// E[π].
        mixing_weights: Vec<f64>,
        /// Dirichlet concentrations of q(π).
        weight_concentrations: Vec<f64>,
        means: Vec<f64>,
        /// E[1/τ] plug-in, β/α per coordinate.
        variances: Vec<f64>,
        components: Vec<NormalGammaDump>,
        responsibilities_path: String,
    },
    BlrArd {
        #[serde(flatten)]
        run: RunInfo,
        dim: usize,
        a0: f64,
        b0: f64,
        c0: f64,
        d0: f64,
        beta_star: Vec<f64>,
        v_star_diag: Vec<f64>,
        a_star: f64,
        b_star: f64,
        c_star: f64,
        d_star: Vec<f64>,
        e_alpha: Vec<f64>,
        /// V*⁻¹, `dim × dim`.
        v_inv: Vec<f64>,
    },
    Lda {
        #[serde(flatten)]
        run: RunInfo,
        k: usize,
        vocab_size: usize,
        eta: f64,
        alpha: Vec<f64>,
        /// Top 20 terms per topic with their normalized λ weights.
        lambda: Vec<Vec<TopTerm>>,
        lambda_path: String,
        gamma_path: String,
    },
}

impl FitDump {
    pub fn run(&self) -> &RunInfo {
        match self {
            FitDump::Gmm { run, .. }
            | FitDump::GmmDiag { run, .. }
            | FitDump::BlrArd { run, .. }
            | FitDump::Lda { run, .. } => run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_elbo: f64,
    pub converged: bool,
    pub iterations_run: usize,
    pub fit_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub algorithm: String,
    pub runs: Vec<SeedSummary>,
    /// Seed with the highest final ELBO.
    pub best_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Truth {
    /// Also used for `gmm-diag` data, which is drawn from the same
    /// unit-variance mixture.
    Gmm {
        seed: u64,
        k: usize,
        dim: usize,
        /// `k × dim`.
        means: Vec<f64>,
        labels: Vec<usize>,
    },
    BlrArd {
        seed: u64,
        dim: usize,
        beta: Vec<f64>,
        noise_sd: f64,
    },
    Lda {
        seed: u64,
        k: usize,
        vocab_size: usize,
        /// `k × vocab_size`, each row a distribution.
        topics: Vec<f64>,
        /// `docs × k`.
        proportions: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub model: String,
    pub fit_path: String,
    pub data_path: String,
    pub n: usize,
    /// Per point for gmm, gmm-diag and blr-ard; per word for lda.
    pub heldout_log_predictive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldDiagnostic {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub target_variances: [f64; 2],
    pub meanfield_variances: [f64; 2],
    pub contour_path: String,
}
