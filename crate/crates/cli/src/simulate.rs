//! The `simulate` command: synthetic datasets with a ground-truth sidecar.

use std::path::PathBuf;

use meanfield_core::gmm::{simulate, SimulationConfig};
use meanfield_core::lda::{synthetic_corpus, SyntheticCorpusConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dump::Truth;
use crate::error::{CliError, CliResult};
use crate::fit::ModelKind;
use crate::io;
use crate::options::Options;

pub const KEYS: &[&str] = &[
    "model",
    "out",
    "seed",
    "k",
    "n",
    "dim",
    "mean-std",
    "min-separation",
    "balanced",
    "noise",
    "relevant",
    "v",
    "docs",
    "words-per-doc",
    "alpha",
    "eta",
    "disjoint",
];

pub fn run(opts: &Options) -> CliResult<()> {
    let model: ModelKind = opts.require("model")?;
    let out: PathBuf = opts.get_or("out", PathBuf::from("."))?;
    let seed: u64 = opts.get_or("seed", 0)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::config("out", format!("cannot create {}: {e}", out.display())))?;

    let (data_name, truth) = match model {
        ModelKind::Gmm | ModelKind::GmmDiag => {
            let config = SimulationConfig {
                mean_std: opts.get_or("mean-std", 5.0)?,
                min_separation: opts.get_or("min-separation", 0.0)?,
                balanced: opts.flag("balanced")?,
                ..SimulationConfig::new(opts.require("k")?, opts.require("n")?, opts.get_or("dim", 1)?, seed)
            };
            let sim = simulate(&config)?;
            let dim = config.dim;
            io::write_matrix(&out.join("data.csv"), None, sim.data.rows().map(|r| (None, r)))?;
            (
                "data.csv",
                Truth::Gmm {
                    seed,
                    k: config.k,
                    dim,
                    means: sim.means,
                    labels: sim.labels,
                },
            )
        }
        ModelKind::BlrArd => {
            let n: usize = opts.require("n")?;
            let dim: usize = opts.require("dim")?;
            let relevant: usize = opts.get_or("relevant", dim.div_ceil(2))?;
            let noise: f64 = opts.get_or("noise", 0.5)?;
            if dim == 0 {
                return Err(CliError::config("dim", "must be >= 1"));
            }
            if n == 0 {
                return Err(CliError::config("n", "must be >= 1"));
            }
            if relevant > dim {
                return Err(CliError::config("relevant", "must not exceed dim"));
            }
            if !(noise > 0.0) || !noise.is_finite() {
                return Err(CliError::config("noise", "must be finite and > 0"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            // The first `relevant` coefficients are nonzero.
            let beta: Vec<f64> = (0..dim).map(|j| if j < relevant { 2.0 * normal() } else { 0.0 }).collect();
            let mut rows = Vec::with_capacity(n * (dim + 1));
            for _ in 0..n {
                let x: Vec<f64> = (0..dim).map(|_| normal()).collect();
                let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + noise * normal();
                rows.extend(x);
                rows.push(y);
            }
            io::write_matrix(&out.join("data.csv"), None, rows.chunks_exact(dim + 1).map(|r| (None, r)))?;
            (
                "data.csv",
                Truth::BlrArd {
                    seed,
                    dim,
                    beta,
                    noise_sd: noise,
                },
            )
        }
        ModelKind::Lda => {
            let k: usize = opts.require("k")?;
            let config = SyntheticCorpusConfig {
                k,
                v: opts.require("v")?,
                docs: opts.require("docs")?,
                words_per_doc: opts.get_or("words-per-doc", 50)?,
                alpha: opts.get_or("alpha", 0.5)?,
                eta: opts.get_or("eta", 0.1)?,
                disjoint: opts.flag("disjoint")?,
                seed,
            };
            let sim = synthetic_corpus(&config)?;
            io::write_corpus(&out.join("corpus.txt"), &sim.corpus)?;
            (
                "corpus.txt",
                Truth::Lda {
                    seed,
                    k,
                    vocab_size: config.v,
                    topics: sim.topics,
                    proportions: sim.proportions,
                },
            )
        }
    };
    io::write_json(&out.join("truth.json"), &truth)?;
    log::info!("wrote {} and truth.json to {}", data_name, out.display());
    println!("{}", out.join(data_name).display());
    Ok(())
}
