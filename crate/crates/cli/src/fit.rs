//! The `fit` command.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use meanfield_core::blr_ard::{blr_ard_svi_fit, BlrArd, BlrArdConfig, BlrArdState, RegressionData};
use meanfield_core::condconj::{local_steps, svi_fit, StepSchedule, SviSettings};
use meanfield_core::data::{split_indices, Dataset, Observations};
use meanfield_core::engine::{cavi_fit, CaviModel, Clock, FitConfig, FitReport, InitStrategy};
use meanfield_core::gmm::{DiagGmm, DiagGmmConfig, DiagGmmState, Gmm, GmmConfig, GmmState};
use meanfield_core::lda::{lda_svi_fit, Corpus, Lda, LdaConfig, LdaState};

use crate::dump::{FitDump, NormalGammaDump, RunInfo, SeedSummary, Summary, TopTerm};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::options::{seeds, Options};

pub const KEYS: &[&str] = &[
    "model",
    "algorithm",
    "data",
    "out",
    "seed",
    "seeds",
    "max-iters",
    "tol",
    "elbo-every",
    "heldout-fraction",
    "split-seed",
    "init",
    "parallel",
    "k",
    "sigma2",
    "a0",
    "m0",
    "b0",
    "alpha0",
    "beta0",
    "c0",
    "d0",
    "eta",
    "alpha",
    "kappa",
    "delay",
    "scale",
    "batch",
];

const TOP_TERMS: usize = 20;
const DEFAULT_BATCH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gmm,
    GmmDiag,
    BlrArd,
    Lda,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gmm" => Ok(ModelKind::Gmm),
            "gmm-diag" => Ok(ModelKind::GmmDiag),
            "blr-ard" => Ok(ModelKind::BlrArd),
            "lda" => Ok(ModelKind::Lda),
            other => Err(format!("unknown model `{other}` (expected gmm, gmm-diag, blr-ard or lda)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gmm => "gmm",
            ModelKind::GmmDiag => "gmm-diag",
            ModelKind::BlrArd => "blr-ard",
            ModelKind::Lda => "lda",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Algorithm {
    Cavi,
    Svi,
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cavi" => Ok(Algorithm::Cavi),
            "svi" => Ok(Algorithm::Svi),
            other => Err(format!("unknown algorithm `{other}` (expected cavi or svi)")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Cavi => "cavi",
            Algorithm::Svi => "svi",
        })
    }
}

#[derive(Debug, Clone)]
enum Hyper {
    Gmm(GmmConfig),
    GmmDiag(DiagGmmConfig),
    BlrArd(BlrArdConfig),
    Lda(LdaConfig),
}

#[derive(Debug, Clone, Copy)]
struct SviPlan {
    schedule: StepSchedule,
    batch: Option<usize>,
}

impl SviPlan {
    fn settings(&self, n: usize) -> SviSettings {
        SviSettings {
            schedule: self.schedule,
            batch_size: self.batch.unwrap_or(DEFAULT_BATCH.min(n.max(1))),
        }
    }
}

#[derive(Debug, Clone)]
struct Plan {
    model: ModelKind,
    algorithm: Algorithm,
    hyper: Hyper,
    svi: Option<SviPlan>,
    data: PathBuf,
    out: PathBuf,
    seeds: Vec<u64>,
    fit: FitConfig,
    init: InitStrategy,
    init_name: String,
    split_seed: u64,
    parallel: bool,
}

fn resolve(opts: &Options) -> CliResult<Plan> {
    let model: ModelKind = opts.require("model")?;
    let algorithm: Algorithm = opts.get_or("algorithm", Algorithm::Cavi)?;

    let svi = match algorithm {
        Algorithm::Cavi => None,
        Algorithm::Svi if model == ModelKind::GmmDiag => {
            return Err(CliError::config("algorithm", "svi is not available for gmm-diag"));
        }
        Algorithm::Svi => {
            let kappa: f64 = opts.require("kappa")?;
            let schedule = StepSchedule::new(kappa, opts.get_or("delay", 1.0)?, opts.get_or("scale", 1.0)?)?;
            let batch: Option<usize> = opts.get("batch")?;
            if batch == Some(0) {
                return Err(CliError::config("batch", "must be >= 1"));
            }
            Some(SviPlan { schedule, batch })
        }
    };

    let hyper = match model {
        ModelKind::Gmm => {
            let k: usize = opts.require("k")?;
            Hyper::Gmm(GmmConfig::new(k, opts.get_or("sigma2", 1.0)?)?)
        }
        ModelKind::GmmDiag => {
            let k: usize = opts.require("k")?;
            let d = DiagGmmConfig::with_defaults(k);
            let c = DiagGmmConfig {
                k,
                a0: opts.get_or("a0", d.a0)?,
                m0: opts.get_or("m0", d.m0)?,
                b0: opts.get_or("b0", d.b0)?,
                alpha0: opts.get_or("alpha0", d.alpha0)?,
                beta0: opts.get_or("beta0", d.beta0)?,
            };
            c.validate()?;
            Hyper::GmmDiag(c)
        }
        ModelKind::BlrArd => {
            let d = BlrArdConfig::default();
            let c = BlrArdConfig {
                a0: opts.get_or("a0", d.a0)?,
                b0: opts.get_or("b0", d.b0)?,
                c0: opts.get_or("c0", d.c0)?,
                d0: opts.get_or("d0", d.d0)?,
            };
            c.validate()?;
            Hyper::BlrArd(c)
        }
        ModelKind::Lda => {
            let k: usize = opts.require("k")?;
            if k == 0 {
                return Err(CliError::config("k", "must be >= 1"));
            }
            let c = LdaConfig::symmetric(k, opts.get_or("eta", 0.01)?, opts.get_or("alpha", 1.0 / k as f64)?);
            c.validate()?;
            Hyper::Lda(c)
        }
    };

    let init_name: String = opts.get_or("init", String::from("data_calibrated"))?;
    let init: InitStrategy = init_name.parse()?;
    let fit = FitConfig {
        max_iters: opts.get_or("max-iters", FitConfig::default().max_iters)?,
        tol: opts.get_or("tol", FitConfig::default().tol)?,
        heldout_fraction: opts.get_or("heldout-fraction", 0.0)?,
        elbo_every: opts.get_or("elbo-every", 1)?,
        ..FitConfig::default()
    };
    fit.validate()?;

    Ok(Plan {
        model,
        algorithm,
        hyper,
        svi,
        data: opts.require("data")?,
        out: opts.get_or("out", PathBuf::from("."))?,
        seeds: seeds(opts)?,
        fit,
        init,
        init_name,
        split_seed: opts.get_or("split-seed", 0)?,
        parallel: opts.flag("parallel")?,
    })
}

/// Training and held-out parts of one dataset, with the original indices of
/// the training items.
struct Split<D> {
    train: D,
    heldout: Option<D>,
    train_idx: Vec<usize>,
}

fn split<D: Dataset>(data: D, plan: &Plan) -> CliResult<Split<D>> {
    let (train_idx, held_idx) = split_indices(data.len(), plan.fit.heldout_fraction, plan.split_seed)?;
    if held_idx.is_empty() {
        return Ok(Split {
            train_idx,
            train: data,
            heldout: None,
        });
    }
    Ok(Split {
        train: data.subset(&train_idx),
        heldout: Some(data.subset(&held_idx)),
        train_idx,
    })
}

enum Loaded {
    Observations(Split<Observations>),
    Regression(Split<RegressionData>),
    Corpus(Split<Corpus>),
}

impl Loaded {
    fn sizes(&self) -> (usize, usize) {
        fn sz<D: Dataset>(s: &Split<D>) -> (usize, usize) {
            (s.train.len(), s.heldout.as_ref().map_or(0, Dataset::len))
        }
        match self {
            Loaded::Observations(s) => sz(s),
            Loaded::Regression(s) => sz(s),
            Loaded::Corpus(s) => sz(s),
        }
    }
}

fn load(plan: &Plan) -> CliResult<Loaded> {
    let loaded = match plan.model {
        ModelKind::Gmm | ModelKind::GmmDiag => Loaded::Observations(split(io::read_observations(&plan.data)?, plan)?),
        ModelKind::BlrArd => Loaded::Regression(split(io::read_regression(&plan.data)?, plan)?),
        ModelKind::Lda => Loaded::Corpus(split(io::read_corpus(&plan.data)?, plan)?),
    };
    if loaded.sizes().0 == 0 {
        return Err(CliError::data(format!("{} leaves no training data", plan.data.display())));
    }
    Ok(loaded)
}

struct InstantClock(Instant);

impl Clock for InstantClock {
    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

enum Fitted {
    Gmm(FitReport<GmmState>),
    GmmDiag(FitReport<DiagGmmState>),
    BlrArd(FitReport<BlrArdState>),
    Lda(FitReport<LdaState>),
}

fn run_cavi<M: CaviModel>(
    model: &M,
    train: &M::Data,
    heldout: Option<&M::Data>,
    plan: &Plan,
    config: &FitConfig,
) -> CliResult<FitReport<M::State>> {
    let clock = InstantClock(Instant::now());
    let init = model.init_state(train, plan.init, config.seed)?;
    Ok(cavi_fit(model, train, heldout, config, init, &clock)?)
}

fn fit_seed(plan: &Plan, data: &Loaded, seed: u64) -> CliResult<Fitted> {
    let config = FitConfig {
        seed,
        ..plan.fit.clone()
    };
    let clock = InstantClock(Instant::now());
    let fitted = match (&plan.hyper, data) {
        (Hyper::Gmm(c), Loaded::Observations(s)) => {
            let model = Gmm::new(*c, s.train.dim())?;
            let report = match plan.svi {
                None => run_cavi(&model, &s.train, s.heldout.as_ref(), plan, &config)?,
                Some(svi) => {
                    let init = model.init_state(&s.train, plan.init, seed)?;
                    let settings = svi.settings(s.train.len());
                    let report = svi_fit(
                        &model,
                        &s.train,
                        s.heldout.as_ref(),
                        &settings,
                        &config,
                        model.global_from_state(&init),
                        &clock,
                    )?;
                    let phis = local_steps(&model, &report.final_state, &s.train)?;
                    let state = model.state_from_global(&report.final_state, &phis)?;
                    report.map_state(|_| state)
                }
            };
            Fitted::Gmm(report)
        }
        (Hyper::GmmDiag(c), Loaded::Observations(s)) => {
            let model = DiagGmm::new(*c, s.train.dim())?;
            Fitted::GmmDiag(run_cavi(&model, &s.train, s.heldout.as_ref(), plan, &config)?)
        }
        (Hyper::BlrArd(c), Loaded::Regression(s)) => {
            let model = BlrArd::new(*c, s.train.dim())?;
            let report = match plan.svi {
                None => run_cavi(&model, &s.train, s.heldout.as_ref(), plan, &config)?,
                Some(svi) => {
                    let init = model.init_state(&s.train, plan.init, seed)?;
                    let settings = svi.settings(s.train.len());
                    blr_ard_svi_fit(&model, &s.train, s.heldout.as_ref(), &settings, &config, init, &clock)?
                }
            };
            Fitted::BlrArd(report)
        }
        (Hyper::Lda(c), Loaded::Corpus(s)) => {
            let model = Lda::new(c.clone(), s.train.vocab_size())?;
            let report = match plan.svi {
                None => run_cavi(&model, &s.train, s.heldout.as_ref(), plan, &config)?,
                Some(svi) => {
                    let init = model.init_state(&s.train, plan.init, seed)?;
                    let settings = svi.settings(s.train.len());
                    lda_svi_fit(&model, &s.train, s.heldout.as_ref(), &settings, &config, &init, &clock)?
                }
            };
            Fitted::Lda(report)
        }
        _ => unreachable!("data is loaded according to the model kind"),
    };
    Ok(fitted)
}

fn run_info<S>(plan: &Plan, data: &Loaded, seed: u64, report: &FitReport<S>, trace_path: &str) -> CliResult<RunInfo> {
    let (n_train, n_heldout) = data.sizes();
    Ok(RunInfo {
        seed,
        algorithm: plan.algorithm.to_string(),
        init: plan.init_name.clone(),
        final_elbo: report
            .final_elbo()
            .ok_or_else(|| CliError::Numeric {
                message: "the fit recorded no ELBO".into(),
            })?,
        converged: report.converged,
        iterations_run: report.iterations_run,
        n_train,
        n_heldout,
        heldout_log_predictive: report.heldout_trace.last().map(|h| h.log_predictive),
        trace_path: trace_path.to_string(),
    })
}

fn labelled_rows<'a>(data: &'a [f64], width: usize, labels: &'a [usize]) -> impl Iterator<Item = (Option<String>, &'a [f64])> {
    data.chunks_exact(width).zip(labels).map(|(row, l)| (Some(l.to_string()), row))
}

fn responsibility_header(k: usize) -> Vec<String> {
    std::iter::once("index".to_string())
        .chain((1..=k).map(|j| format!("phi_{j}")))
        .collect()
}

/// Writes the per-seed artifacts and returns the fit dump.
fn write_seed(plan: &Plan, data: &Loaded, seed: u64, fitted: &Fitted) -> CliResult<FitDump> {
    let out = &plan.out;
    let trace_name = format!("trace_{seed}.csv");
    let trace_path = out.join(&trace_name);
    let dump = match (fitted, data) {
        (Fitted::Gmm(r), Loaded::Observations(s)) => {
            io::write_trace(&trace_path, r)?;
            let st = &r.final_state;
            let resp_name = format!("responsibilities_{seed}.csv");
            io::write_matrix(
                &out.join(&resp_name),
                Some(&responsibility_header(st.k())),
                labelled_rows(st.resp(), st.k(), &s.train_idx),
            )?;
            let Hyper::Gmm(c) = &plan.hyper else { unreachable!() };
            FitDump::Gmm {
                run: run_info(plan, data, seed, r, &trace_name)?,
                k: st.k(),
                dim: st.dim(),
                sigma2: c.sigma2,
                means: st.means().to_vec(),
                variances: st.variances().to_vec(),
                responsibilities_path: resp_name,
            }
        }
        (Fitted::GmmDiag(r), Loaded::Observations(s)) => {
            io::write_trace(&trace_path, r)?;
            let st = &r.final_state;
            let resp_name = format!("responsibilities_{seed}.csv");
            io::write_matrix(
                &out.join(&resp_name),
                Some(&responsibility_header(st.k())),
                labelled_rows(st.resp(), st.k(), &s.train_idx),
            )?;
            let Hyper::GmmDiag(c) = &plan.hyper else { unreachable!() };
            FitDump::GmmDiag {
                run: run_info(plan, data, seed, r, &trace_name)?,
                k: st.k(),
                dim: st.dim(),
                a0: c.a0,
                m0: c.m0,
                b0: c.b0,
                alpha0: c.alpha0,
                beta0: c.beta0,
                mixing_weights: st.mixing_weights(),
                weight_concentrations: st.weights().to_vec(),
                means: st.means(),
                variances: st.variances(),
                components: st
                    .components()
                    .iter()
                    .map(|p| NormalGammaDump {
                        mean: p.mean,
                        scale: p.scale,
                        shape: p.shape,
                        rate: p.rate,
                    })
                    .collect(),
                responsibilities_path: resp_name,
            }
        }
        (Fitted::BlrArd(r), Loaded::Regression(_)) => {
            io::write_trace(&trace_path, r)?;
            let st = &r.final_state;
            let Hyper::BlrArd(c) = &plan.hyper else { unreachable!() };
            FitDump::BlrArd {
                run: run_info(plan, data, seed, r, &trace_name)?,
                dim: st.dim(),
                a0: c.a0,
                b0: c.b0,
                c0: c.c0,
                d0: c.d0,
                beta_star: st.beta_star.clone(),
                v_star_diag: st.v_star_diag()?,
                a_star: st.a_star,
                b_star: st.b_star,
                c_star: st.c_star,
                d_star: st.d_star.clone(),
                e_alpha: st.e_alpha(),
                v_inv: st.v_inv.clone(),
            }
        }
        (Fitted::Lda(r), Loaded::Corpus(s)) => {
            io::write_trace(&trace_path, r)?;
            let st = &r.final_state;
            let Hyper::Lda(c) = &plan.hyper else { unreachable!() };
            let (k, v) = (st.k(), st.vocab_size());
            let lambda_name = format!("lambda_{seed}.csv");
            io::write_matrix(&out.join(&lambda_name), None, st.lambda.chunks_exact(v).map(|r| (None, r)))?;
            let gamma_name = format!("gamma_{seed}.csv");
            let header: Vec<String> = std::iter::once("doc".to_string())
                .chain((1..=k).map(|j| format!("gamma_{j}")))
                .collect();
            let doc_ids: Vec<usize> = s.train_idx.iter().map(|d| d + 1).collect();
            io::write_matrix(&out.join(&gamma_name), Some(&header), labelled_rows(&st.gamma, k, &doc_ids))?;
            FitDump::Lda {
                run: run_info(plan, data, seed, r, &trace_name)?,
                k,
                vocab_size: v,
                eta: c.eta,
                alpha: c.alpha.clone(),
                lambda: (0..k)
                    .map(|t| {
                        st.top_terms(t, TOP_TERMS)
                            .into_iter()
                            .map(|(w, weight)| TopTerm { term: w + 1, weight })
                            .collect()
                    })
                    .collect(),
                lambda_path: lambda_name,
                gamma_path: gamma_name,
            }
        }
        _ => unreachable!("fits follow the loaded data"),
    };
    io::write_json(&out.join(format!("fit_{seed}.json")), &dump)?;
    Ok(dump)
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::config("out", format!("cannot create {}: {e}", path.display())))
}

pub fn run(opts: &Options) -> CliResult<()> {
    let plan = resolve(opts)?;
    ensure_dir(&plan.out)?;
    let data = load(&plan)?;
    let (n_train, n_held) = data.sizes();
    log::info!(
        "fitting {} with {} on {} training and {} held-out items, seeds {:?}",
        plan.model,
        plan.algorithm,
        n_train,
        n_held,
        plan.seeds
    );

    let results: Vec<CliResult<Fitted>> = if plan.parallel && plan.seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .seeds
                .iter()
                .map(|&seed| {
                    let (plan, data) = (&plan, &data);
                    scope.spawn(move || fit_seed(plan, data, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fit thread panicked"))
                .collect()
        })
    } else {
        plan.seeds.iter().map(|&seed| fit_seed(&plan, &data, seed)).collect()
    };

    let mut runs = Vec::with_capacity(plan.seeds.len());
    for (&seed, result) in plan.seeds.iter().zip(results) {
        let fitted = result.map_err(|e| match e {
            CliError::Numeric { message } => CliError::Numeric {
                message: format!("seed {seed}: {message}"),
            },
            other => other,
        })?;
        let dump = write_seed(&plan, &data, seed, &fitted)?;
        let info = dump.run();
        log::info!(
            "seed {seed}: ELBO {:.6} after {} iterations (converged: {})",
            info.final_elbo,
            info.iterations_run,
            info.converged
        );
        if let Some(lp) = info.heldout_log_predictive {
            log::info!("seed {seed}: held-out log predictive {lp:.6}");
        }
        runs.push(SeedSummary {
            seed,
            final_elbo: info.final_elbo,
            converged: info.converged,
            iterations_run: info.iterations_run,
            fit_path: format!("fit_{seed}.json"),
        });
    }
    let best_seed = runs
        .iter()
        .max_by(|a, b| a.final_elbo.total_cmp(&b.final_elbo))
        .map(|r| r.seed)
        .unwrap_or_default();
    let summary = Summary {
        model: plan.model.to_string(),
        algorithm: plan.algorithm.to_string(),
        runs,
        best_seed,
    };
    io::write_json(&plan.out.join("summary.json"), &summary)?;
    println!("{}", plan.out.join("summary.json").display());
    Ok(())
}
