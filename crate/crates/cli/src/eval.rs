//! The `eval` command: average held-out log predictive of a saved fit.

use std::path::{Path, PathBuf};

use meanfield_core::blr_ard::{BlrArd, BlrArdConfig, BlrArdState};
use meanfield_core::data::Dataset;
use meanfield_core::engine::heldout_log_predictive;
use meanfield_core::gmm::{DiagGmm, DiagGmmConfig, DiagGmmState, Gmm, GmmConfig, GmmState, NormalGammaParams};
use meanfield_core::lda::{heldout_per_word, LdaConfig};

use crate::dump::{EvalOutput, FitDump};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::options::Options;

pub const KEYS: &[&str] = &["fit", "data", "out"];

fn read_fit(path: &Path) -> CliResult<FitDump> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data_at(path, e.line(), e))
}

fn ensure_dim(found: usize, expected: usize, path: &Path) -> CliResult<()> {
    if found != expected {
        return Err(CliError::data(format!(
            "{} has {found} input columns but the fit expects {expected}",
            path.display()
        )));
    }
    Ok(())
}

/// λ matrix written by `fit`, `k` rows of `v` values.
fn read_lambda(path: &Path, k: usize, v: usize) -> CliResult<Vec<f64>> {
    let obs = io::read_observations(path)?;
    if obs.len() != k || obs.dim() != v {
        return Err(CliError::data(format!(
            "{} is {} x {} but the fit declares {k} x {v}",
            path.display(),
            obs.len(),
            obs.dim()
        )));
    }
    Ok(obs.values().to_vec())
}

fn evaluate(fit_path: &Path, dump: &FitDump, data: &Path) -> CliResult<(usize, f64)> {
    let result = match dump {
        FitDump::Gmm {
            k,
            dim,
            sigma2,
            means,
            variances,
            ..
        } => {
            let held = io::read_observations(data)?;
            ensure_dim(held.dim(), *dim, data)?;
            let model = Gmm::new(GmmConfig::new(*k, *sigma2)?, *dim)?;
            let state = GmmState::new(*k, *dim, means.clone(), variances.clone(), Vec::new())?;
            (held.len(), heldout_log_predictive(&model, &state, &held)?)
        }
        FitDump::GmmDiag {
            k,
            dim,
            a0,
            m0,
            b0,
            alpha0,
            beta0,
            weight_concentrations,
            components,
            ..
        } => {
            let held = io::read_observations(data)?;
            ensure_dim(held.dim(), *dim, data)?;
            let config = DiagGmmConfig {
                k: *k,
                a0: *a0,
                m0: *m0,
                b0: *b0,
                alpha0: *alpha0,
                beta0: *beta0,
            };
            let model = DiagGmm::new(config, *dim)?;
            let components = components
                .iter()
                .map(|c| NormalGammaParams {
                    mean: c.mean,
                    scale: c.scale,
                    shape: c.shape,
                    rate: c.rate,
                })
                .collect();
            let state = DiagGmmState::new(*k, *dim, weight_concentrations.clone(), components, Vec::new())?;
            (held.len(), heldout_log_predictive(&model, &state, &held)?)
        }
        FitDump::BlrArd {
            dim,
            a0,
            b0,
            c0,
            d0,
            beta_star,
            a_star,
            b_star,
            c_star,
            d_star,
            v_inv,
            ..
        } => {
            let held = io::read_regression(data)?;
            ensure_dim(held.dim(), *dim, data)?;
            let config = BlrArdConfig {
                a0: *a0,
                b0: *b0,
                c0: *c0,
                d0: *d0,
            };
            let model = BlrArd::new(config, *dim)?;
            let state = BlrArdState::new(
                *dim,
                v_inv.clone(),
                beta_star.clone(),
                *a_star,
                *b_star,
                *c_star,
                d_star.clone(),
            )?;
            (held.len(), heldout_log_predictive(&model, &state, &held)?)
        }
        FitDump::Lda {
            k,
            vocab_size,
            eta,
            alpha,
            lambda_path,
            ..
        } => {
            let held = io::read_corpus(data)?;
            ensure_dim(held.vocab_size(), *vocab_size, data)?;
            let base = fit_path.parent().unwrap_or(Path::new("."));
            let lambda = read_lambda(&base.join(lambda_path), *k, *vocab_size)?;
            let config = LdaConfig {
                k: *k,
                eta: *eta,
                alpha: alpha.clone(),
            };
            config.validate()?;
            if held.total_tokens() == 0.0 {
                return Err(CliError::data(format!("{} contains no tokens", data.display())));
            }
            (held.len(), heldout_per_word(&lambda, *vocab_size, &held, &config)?)
        }
    };
    Ok(result)
}

pub fn run(opts: &Options) -> CliResult<()> {
    let fit_path: PathBuf = opts.require("fit")?;
    let data: PathBuf = opts.require("data")?;
    let out: PathBuf = match opts.get::<PathBuf>("out")? {
        Some(p) => p,
        None => fit_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let dump = read_fit(&fit_path)?;
    let (n, value) = evaluate(&fit_path, &dump, &data).map_err(|e| match e {
        // A fit that cannot be rebuilt or a mismatched dataset is an input
        // problem, not a failed fit.
        CliError::Config { field, message } => CliError::data(format!("{}: `{field}` {message}", fit_path.display())),
        other => other,
    })?;
    let model = match dump {
        FitDump::Gmm { .. } => "gmm",
        FitDump::GmmDiag { .. } => "gmm-diag",
        FitDump::BlrArd { .. } => "blr-ard",
        FitDump::Lda { .. } => "lda",
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::config("out", format!("cannot create {}: {e}", out.display())))?;
    let result = EvalOutput {
        model: model.to_string(),
        fit_path: fit_path.display().to_string(),
        data_path: data.display().to_string(),
        n,
        heldout_log_predictive: value,
    };
    io::write_json(&out.join("eval.json"), &result)?;
    println!("{value:.6}");
    Ok(())
}
