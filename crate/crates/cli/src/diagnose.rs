//! The `diagnose-meanfield` command: contours of a bivariate Gaussian and of
//! its optimal mean-field approximation.

use std::fmt::Write as _;
use std::path::PathBuf;

use meanfield_core::engine::{gaussian_contour, meanfield_gaussian_fixed_point};

use crate::dump::MeanFieldDiagnostic;
use crate::error::{CliError, CliResult};
use crate::io::{self, num};
use crate::options::Options;

pub const KEYS: &[&str] = &["cov", "mean", "points", "out"];

/// Contours are drawn at two standard deviations.
const CONTOUR_SDS: f64 = 2.0;

pub fn run(opts: &Options) -> CliResult<()> {
    let cov: Vec<f64> = opts.list("cov")?.ok_or_else(|| CliError::config("cov", "is required"))?;
    let cov = match cov[..] {
        [v] => [[v, 0.0], [0.0, v]],
        [a, b, c] => [[a, b], [b, c]],
        [a, b, c, d] => [[a, b], [c, d]],
        _ => {
            return Err(CliError::config(
                "cov",
                "expected 4 row-major entries, 3 entries (s11,s12,s22) or 1 variance",
            ))
        }
    };
    let mean: Vec<f64> = opts.list("mean")?.unwrap_or_else(|| vec![0.0, 0.0]);
    let [m1, m2] = mean[..] else {
        return Err(CliError::config("mean", "expected 2 entries"));
    };
    let mean = [m1, m2];
    let points: usize = opts.get_or("points", 200)?;
    if points < 3 {
        return Err(CliError::config("points", "must be >= 3"));
    }
    let out: PathBuf = opts.get_or("out", PathBuf::from("."))?;

    let spd = |e: meanfield_core::Error| CliError::config("cov", e.to_string());
    let (_, variances) = meanfield_gaussian_fixed_point(mean, cov).map_err(spd)?;
    let target = gaussian_contour(mean, cov, CONTOUR_SDS, points).map_err(spd)?;
    let approx_cov = [[variances[0], 0.0], [0.0, variances[1]]];
    let approx = gaussian_contour(mean, approx_cov, CONTOUR_SDS, points).map_err(spd)?;

    std::fs::create_dir_all(&out).map_err(|e| CliError::config("out", format!("cannot create {}: {e}", out.display())))?;
    let mut csv = String::from("curve,x,y\n");
    for (name, curve) in [("target", &target), ("meanfield", &approx)] {
        for p in curve {
            let _ = writeln!(csv, "{name},{},{}", num(p[0]), num(p[1]));
        }
    }
    let contour_name = "meanfield_contours.csv";
    io::write_text(&out.join(contour_name), &csv)?;
    let report = MeanFieldDiagnostic {
        mean,
        covariance: cov,
        target_variances: [cov[0][0], cov[1][1]],
        meanfield_variances: variances,
        contour_path: contour_name.to_string(),
    };
    io::write_json(&out.join("meanfield.json"), &report)?;
    println!("meanfield variances: {} {}", variances[0], variances[1]);
    Ok(())
}
