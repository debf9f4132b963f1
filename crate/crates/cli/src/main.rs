//! `meanfield`: fit mean-field variational models from the command line.
//!
//! Exit status: 0 on success, 1 when an output cannot be written, 2 for
//! configuration errors, 3 for data errors and 4 for numeric failures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod diagnose;
mod dump;
mod error;
mod eval;
mod fit;
mod io;
mod options;
mod simulate;

use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};
use log::LevelFilter;

use crate::error::CliError;
use crate::options::Options;

fn value(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("VALUE")
        .allow_hyphen_values(true)
        .help(help)
}

fn flag(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).action(ArgAction::SetTrue).help(help)
}

fn config_arg() -> Arg {
    value("config", "File of `key = value` lines; flags override it")
}

fn fit_command() -> Command {
    Command::new("fit")
        .about("Fit a model with CAVI or SVI for one or more seeds")
        .args([
            config_arg(),
            value("model", "gmm, gmm-diag, blr-ard or lda"),
            value("algorithm", "cavi (default) or svi"),
            value("data", "CSV for gmm/gmm-diag/blr-ard, UCI bag-of-words for lda"),
            value("out", "Output directory (default .)"),
            value("seed", "Single seed"),
            value("seeds", "Comma list of seeds or ranges a..b"),
            value("max-iters", "Iteration cap (default 500)"),
            value("tol", "Relative ELBO change tolerance (default 1e-8)"),
            value("elbo-every", "Record the ELBO every this many iterations (default 1)"),
            value("heldout-fraction", "Fraction held out for predictive monitoring, in [0, 0.5]"),
            value("split-seed", "Seed of the held-out split, shared by all fit seeds (default 0)"),
            value("init", "prior or data_calibrated (default)"),
            flag("parallel", "Run seeds on separate threads"),
            value("k", "Number of components or topics"),
            value("sigma2", "gmm: prior variance of the component means (default 1)"),
            value("a0", "gmm-diag: Dirichlet concentration; blr-ard: noise precision shape"),
            value("m0", "gmm-diag: prior mean"),
            value("b0", "gmm-diag: prior mean scale; blr-ard: noise precision rate"),
            value("alpha0", "gmm-diag: precision shape"),
            value("beta0", "gmm-diag: precision rate"),
            value("c0", "blr-ard: relevance shape"),
            value("d0", "blr-ard: relevance rate"),
            value("eta", "lda: topic Dirichlet parameter (default 0.01)"),
            value("alpha", "lda: proportion Dirichlet parameter (default 1/k)"),
            value("kappa", "svi: step-size exponent in (0.5, 1], required"),
            value("delay", "svi: step-size delay (default 1)"),
            value("scale", "svi: step-size scale (default 1)"),
            value("batch", "svi: minibatch size (default min(10, n))"),
        ])
}

fn simulate_command() -> Command {
    Command::new("simulate")
        .about("Write a synthetic dataset and its ground truth")
        .args([
            config_arg(),
            value("model", "gmm, gmm-diag, blr-ard or lda"),
            value("out", "Output directory (default .)"),
            value("seed", "Seed (default 0)"),
            value("k", "Components or topics"),
            value("n", "Number of points (gmm, blr-ard)"),
            value("dim", "Dimension (default 1 for gmm)"),
            value("mean-std", "gmm: standard deviation of the true means (default 5)"),
            value("min-separation", "gmm: minimum distance between true means (default 0)"),
            flag("balanced", "gmm: equal cluster sizes"),
            value("noise", "blr-ard: noise standard deviation (default 0.5)"),
            value("relevant", "blr-ard: number of nonzero coefficients (default ceil(dim/2))"),
            value("v", "lda: vocabulary size"),
            value("docs", "lda: number of documents"),
            value("words-per-doc", "lda: tokens per document (default 50)"),
            value("alpha", "lda: proportion Dirichlet parameter (default 0.5)"),
            value("eta", "lda: topic Dirichlet parameter (default 0.1)"),
            flag("disjoint", "lda: topics use disjoint vocabulary blocks"),
        ])
}

fn eval_command() -> Command {
    Command::new("eval")
        .about("Average held-out log predictive of a saved fit")
        .args([
            config_arg(),
            value("fit", "fit_<seed>.json written by `fit`"),
            value("data", "Held-out data in the model's input format"),
            value("out", "Directory for eval.json (default: next to the fit)"),
        ])
}

fn diagnose_command() -> Command {
    Command::new("diagnose-meanfield")
        .about("Contours of a bivariate Gaussian and its mean-field approximation")
        .args([
            config_arg(),
            value("cov", "Covariance: s11,s12,s21,s22 (or s11,s12,s22)"),
            value("mean", "Mean: m1,m2 (default 0,0)"),
            value("points", "Points per contour (default 200)"),
            value("out", "Output directory (default .)"),
        ])
}

fn cli() -> Command {
    Command::new("meanfield")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Mean-field variational inference: CAVI and SVI for mixtures, sparse regression and topic models")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands([fit_command(), simulate_command(), eval_command(), diagnose_command()])
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("VI_LOG").ok().as_deref() {
        None | Some("") | Some("info") => LevelFilter::Info,
        Some("debug") => LevelFilter::Debug,
        Some("quiet") => LevelFilter::Off,
        Some(other) => {
            return Err(CliError::config("VI_LOG", format!("expected debug, info or quiet, found `{other}`")));
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn dispatch() -> Result<(), CliError> {
    init_logging()?;
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let (keys, run): (&[&str], fn(&Options) -> Result<(), CliError>) = match name {
        "fit" => (fit::KEYS, fit::run),
        "simulate" => (simulate::KEYS, simulate::run),
        "eval" => (eval::KEYS, eval::run),
        "diagnose-meanfield" => (diagnose::KEYS, diagnose::run),
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    let opts = Options::collect(sub, keys)?;
    run(&opts)
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
