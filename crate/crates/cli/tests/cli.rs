use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_meanfield"));
    c.env("VI_LOG", "quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn two_ones_give_the_conjugate_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "two_ones.csv", "1\n1\n");
    let out = dir.path().join("out");
    let o = run(&["fit", "--model", "gmm", "--k", "1", "--sigma2", "1", "--data", s(&data), "--tol", "1e-10", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(&out.join("fit_0.json"));
    assert_eq!(fit["model"], "gmm");
    let means = floats(&fit["means"]);
    let vars = floats(&fit["variances"]);
    assert_eq!(means.len(), 1);
    assert!((means[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((vars[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!(format!("{:.4}", means[0]) == "0.6667" && format!("{:.4}", vars[0]) == "0.3333");

    let trace = fs::read_to_string(out.join("trace_0.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,elbo,elapsed_ms,heldout_logpred"));
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert!(cols[3].is_empty());
    }
    let resp = fs::read_to_string(out.join("responsibilities_0.csv")).unwrap();
    assert_eq!(resp.lines().count(), 3);
}

#[test]
fn svi_without_kappa_is_a_config_error() {
    let o = run(&["fit", "--model", "lda", "--algorithm", "svi"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "1\n2\n");
    for (args, field) in [
        (vec!["--model", "gmm", "--k", "0"], "k"),
        (vec!["--model", "gmm", "--k", "2", "--tol", "-1"], "tol"),
        (vec!["--model", "gmm", "--k", "2", "--heldout-fraction", "0.7"], "heldout_fraction"),
        (vec!["--model", "gmm", "--k", "2", "--sigma2", "x"], "sigma2"),
        (vec!["--model", "gmm-diag", "--k", "2", "--algorithm", "svi", "--kappa", "0.7"], "algorithm"),
        (vec!["--model", "lda", "--k", "2", "--algorithm", "svi", "--kappa", "0.4"], "kappa"),
        (vec!["--model", "nope"], "model"),
        (vec!["--k", "2"], "model"),
    ] {
        let mut full = vec!["fit", "--data", s(&data)];
        full.extend(args);
        let o = run(&full);
        assert_eq!(code(&o), 2, "{full:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(&format!("`{field}`")), "{full:?}: {}", stderr(&o));
    }
}

#[test]
fn malformed_data_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "1,2\n3,oops\n");
    let o = run(&["fit", "--model", "gmm", "--k", "2", "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.csv:2:"), "{}", stderr(&o));

    let corpus = write(dir.path(), "c.txt", "2\n3\n2\n1 1 1\n2 9 1\n");
    let o = run(&["fit", "--model", "lda", "--k", "2", "--data", s(&corpus), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("c.txt:5:"), "{}", stderr(&o));

    let missing = dir.path().join("missing.csv");
    let o = run(&["fit", "--model", "gmm", "--k", "2", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn overflowing_data_is_a_numeric_failure_with_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "huge.csv", "1e200\n-1e200\n");
    let o = run(&["fit", "--model", "gmm", "--k", "2", "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"), "{}", stderr(&o));
}

#[test]
fn ten_seeds_are_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--model", "gmm", "--k", "3", "--n", "150", "--dim", "2", "--seed", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fits = dir.path().join("fits");
    let o = run(&[
        "fit", "--model", "gmm", "--k", "3", "--sigma2", "25", "--data", s(&out.join("data.csv")), "--seeds", "0..10",
        "--out", s(&fits),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(&fits.join("summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 10);
    let elbos: Vec<f64> = runs.iter().map(|r| r["final_elbo"].as_f64().unwrap()).collect();
    let best = summary["best_seed"].as_u64().unwrap();
    let max = elbos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(elbos[best as usize], max);
    for seed in 0..10 {
        assert!(fits.join(format!("fit_{seed}.json")).exists());
        assert!(fits.join(format!("trace_{seed}.csv")).exists());
    }
}

fn numeric_outputs(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.file_name().unwrap().to_str().unwrap().starts_with("trace_"))
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Trace files carry wall-clock timings; compare every other column.
fn trace_without_timing(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            format!("{},{},{}", c[0], c[1], c[3])
        })
        .collect()
}

#[test]
fn fits_are_deterministic_and_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(code(&run(&["simulate", "--model", "gmm", "--k", "3", "--n", "200", "--out", s(&sim)])), 0);
    let data = sim.join("data.csv");
    let fit = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "fit", "--model", "gmm", "--k", "3", "--sigma2", "25", "--data", s(&data), "--seeds", "1,2,3", "--out", s(out),
            "--heldout-fraction", "0.2",
        ];
        args.extend(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    fit(&a, &[]);
    fit(&b, &[]);
    fit(&c, &["--parallel"]);
    assert_eq!(numeric_outputs(&a), numeric_outputs(&b));
    assert_eq!(numeric_outputs(&a), numeric_outputs(&c));
    for seed in 1..=3 {
        let t = format!("trace_{seed}.csv");
        assert_eq!(trace_without_timing(&a.join(&t)), trace_without_timing(&c.join(&t)));
        // Held-out monitoring fills the last column.
        assert!(trace_without_timing(&a.join(&t)).iter().skip(1).all(|l| !l.ends_with(',')));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "1\n1\n");
    let cfg = write(
        dir.path(),
        "run.cfg",
        &format!("model = gmm\nk = 1\nsigma2 = 100\nmax_iters = 50\ndata = {}\n", s(&data)),
    );
    let out = dir.path().join("o");
    let o = run(&["fit", "--config", s(&cfg), "--sigma2", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let means = floats(&json(&out.join("fit_0.json"))["means"]);
    assert!((means[0] - 2.0 / 3.0).abs() < 1e-12);

    let bad = write(dir.path(), "bad.cfg", "model = gmm\nkk = 1\n");
    let o = run(&["fit", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_data_and_truth_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "simulate", "--model", "gmm", "--k", "5", "--n", "1000", "--dim", "2", "--min-separation", "4", "--seed", "11",
            "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let data = fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 1000);
    assert!(data.lines().all(|l| l.split(',').count() == 2));
    let truth = json(&a.join("truth.json"));
    assert_eq!(floats(&truth["means"]).len() / truth["dim"].as_u64().unwrap() as usize, 5);
    assert_eq!(truth["labels"].as_array().unwrap().len(), 1000);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    assert_eq!(fs::read(a.join("truth.json")).unwrap(), fs::read(b.join("truth.json")).unwrap());
}

#[test]
fn simulated_disjoint_corpus_partitions_the_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate", "--model", "lda", "--k", "2", "--v", "20", "--docs", "30", "--disjoint", "--seed", "2", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let truth = json(&dir.path().join("truth.json"));
    let topics = floats(&truth["topics"]);
    for (k, row) in topics.chunks(20).enumerate() {
        for (w, p) in row.iter().enumerate() {
            if (w < 10) != (k == 0) {
                assert_eq!(*p, 0.0);
            }
        }
    }
    let header: Vec<String> = fs::read_to_string(dir.path().join("corpus.txt")).unwrap().lines().take(2).map(String::from).collect();
    assert_eq!(header, ["30", "20"]);
}

#[test]
fn covariance_diagnostic_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["diagnose-meanfield", "--cov", "1,0.9,0.9,1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&dir.path().join("meanfield.json"));
    for v in floats(&report["meanfield_variances"]) {
        assert!((v - 0.19).abs() < 1e-12);
    }
    let csv = fs::read_to_string(dir.path().join("meanfield_contours.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("curve,x,y"));
    let curves: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(curves.into_iter().collect::<Vec<_>>(), ["meanfield", "target"]);

    let o = run(&["diagnose-meanfield", "--cov", "1,0,0,1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("meanfield_contours.csv")).unwrap();
    let target: Vec<&str> = csv.lines().filter(|l| l.starts_with("target")).map(|l| &l[6..]).collect();
    let approx: Vec<&str> = csv.lines().filter(|l| l.starts_with("meanfield")).map(|l| &l[9..]).collect();
    assert_eq!(target, approx);

    let o = run(&["diagnose-meanfield", "--cov", "1,2,2,1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

fn standard_normal_fit(dir: &Path) -> PathBuf {
    write(
        dir,
        "fit.json",
        r#"{"model": "gmm", "seed": 0, "algorithm": "cavi", "init": "prior", "final_elbo": 0.0,
            "converged": true, "iterations_run": 1, "n_train": 0, "n_heldout": 0,
            "heldout_log_predictive": null, "trace_path": "trace_0.csv", "k": 1, "dim": 1,
            "sigma2": 1.0, "means": [0.0], "variances": [1.0], "responsibilities_path": "r.csv"}"#,
    )
}

#[test]
fn eval_of_a_standard_normal_fit() {
    let dir = tempfile::tempdir().unwrap();
    let fit = standard_normal_fit(dir.path());
    let held = write(dir.path(), "held.csv", "0\n");
    let o = run(&["eval", "--fit", s(&fit), "--data", s(&held)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "-0.918939");
    let v = json(&dir.path().join("eval.json"))["heldout_log_predictive"].as_f64().unwrap();
    assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

    let empty = write(dir.path(), "empty.csv", "");
    assert_eq!(code(&run(&["eval", "--fit", s(&fit), "--data", s(&empty)])), 3);
    let wide = write(dir.path(), "wide.csv", "0,1\n");
    assert_eq!(code(&run(&["eval", "--fit", s(&fit), "--data", s(&wide)])), 3);
}

#[test]
fn eval_is_invariant_to_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let fit = standard_normal_fit(dir.path());
    let a = write(dir.path(), "a.csv", "0.5\n-1\n2\n");
    let b = write(dir.path(), "b.csv", "2\n0.5\n-1\n");
    let read = |p: &Path| {
        let o = run(&["eval", "--fit", s(&fit), "--data", s(p), "--out", s(dir.path())]);
        assert_eq!(code(&o), 0);
        json(&dir.path().join("eval.json"))["heldout_log_predictive"].as_f64().unwrap()
    };
    assert!((read(&a) - read(&b)).abs() < 1e-14);
}

/// Fits every model with each supported algorithm on simulated data and
/// evaluates the saved fit on held-out data.
#[test]
fn every_model_fits_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let sims = [
        ("gmm", vec!["--k", "3", "--n", "300", "--dim", "2"], "data.csv"),
        ("gmm-diag", vec!["--k", "3", "--n", "300", "--dim", "3"], "data.csv"),
        ("blr-ard", vec!["--n", "200", "--dim", "6"], "data.csv"),
        ("lda", vec!["--k", "3", "--v", "30", "--docs", "80", "--words-per-doc", "40"], "corpus.txt"),
    ];
    for (model, sim_args, file) in sims {
        let sim = root.join(format!("{model}-sim"));
        let mut args = vec!["simulate", "--model", model, "--seed", "5", "--out", s(&sim)];
        args.extend(sim_args);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{model}: {}", stderr(&o));
        let data = sim.join(file);

        let algorithms: &[&str] = if model == "gmm-diag" { &["cavi"] } else { &["cavi", "svi"] };
        for alg in algorithms {
            let out = root.join(format!("{model}-{alg}"));
            let mut args = vec![
                "fit", "--model", model, "--algorithm", alg, "--data", s(&data), "--out", s(&out), "--heldout-fraction", "0.2",
                "--max-iters", "300", "--seed", "3",
            ];
            match model {
                "gmm" => args.extend(["--k", "3", "--sigma2", "25"]),
                "gmm-diag" => args.extend(["--k", "3"]),
                "lda" => args.extend(["--k", "3", "--eta", "0.1"]),
                _ => {}
            }
            if *alg == "svi" {
                args.extend(["--kappa", "0.7", "--batch", "10", "--elbo-every", "50"]);
            }
            let o = run(&args);
            assert_eq!(code(&o), 0, "{model} {alg}: {}", stderr(&o));
            let fit = json(&out.join("fit_3.json"));
            assert_eq!(fit["model"], model);
            assert_eq!(fit["algorithm"], *alg);
            assert!(fit["final_elbo"].as_f64().unwrap().is_finite());
            let recorded = fit["heldout_log_predictive"].as_f64().unwrap();

            // The held-out rows are not written out, so evaluate on the full data.
            let o = run(&["eval", "--fit", s(&out.join("fit_3.json")), "--data", s(&data)]);
            assert_eq!(code(&o), 0, "{model} {alg} eval: {}", stderr(&o));
            let value = json(&out.join("eval.json"))["heldout_log_predictive"].as_f64().unwrap();
            assert!(value.is_finite() && recorded.is_finite());
        }
    }
    let lda = json(&root.join("lda-cavi").join("fit_3.json"));
    let topics = lda["lambda"].as_array().unwrap();
    assert_eq!(topics.len(), 3);
    assert_eq!(topics[0].as_array().unwrap().len(), 20);
    let blr = json(&root.join("blr-ard-cavi").join("fit_3.json"));
    for key in ["beta_star", "v_star_diag", "d_star", "e_alpha"] {
        assert_eq!(blr[key].as_array().unwrap().len(), 6, "{key}");
    }
}

#[test]
fn logging_levels() {
    let o = Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .env("VI_LOG", "loud")
        .args(["diagnose-meanfield", "--cov", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("VI_LOG"));

    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "1\n2\n");
    let o = Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .env("VI_LOG", "info")
        .args(["fit", "--model", "gmm", "--k", "1", "--data", s(&data), "--out", s(dir.path())])
        .output()
        .unwrap();
    assert!(stderr(&o).contains("ELBO"));
    let o = run(&["fit", "--model", "gmm", "--k", "1", "--data", s(&data), "--out", s(dir.path())]);
    assert!(stderr(&o).is_empty());
}
