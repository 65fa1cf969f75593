use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run pfa")
}

fn ok(args: &[&str]) -> Output {
    let out = pfa(args);
    assert!(out.status.success(), "pfa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path) -> PathBuf {
    let sim = dir.join("sim");
    ok(&[
        "simulate",
        "--n-taxa",
        "10",
        "--n-traits",
        "3",
        "--k-true",
        "2",
        "--types",
        "continuous,binary,ordinal(3)",
        "--missing-fraction",
        "0.1",
        "--seed",
        "11",
        "--out",
        s(&sim),
    ]);
    sim.join("run.cfg")
}

fn fit(cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["fit", "--config", s(cfg), "--iterations", "600", "--burnin", "100", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn same_file(a: &Path, b: &Path) -> bool {
    fs::read(a).unwrap() == fs::read(b).unwrap()
}

#[test]
fn taxon_mismatch_names_the_offender() {
    let dir = TempDir::new().unwrap();
    let tree = dir.path().join("t.nwk");
    let traits = dir.path().join("y.csv");
    fs::write(&tree, "((A:1,B:1):1,D:2);").unwrap();
    fs::write(&traits, "taxon,y1\nA,1.0\nB,2.0\nC,0.5\n").unwrap();
    let out = pfa(&[
        "fit",
        "--tree",
        s(&tree),
        "--traits",
        s(&traits),
        "--column",
        "y1=continuous",
        "--k",
        "1",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('D') && err.contains('C'), "{err}");
    assert!(!dir.path().join("o").join("summary.csv").exists());
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[mcmc]\niterations = 10\nnot_a_key = 3\n").unwrap();
    assert_eq!(pfa(&["fit", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(pfa(&["fit", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(pfa(&["fit", "--iterations", "many"]).status.code(), Some(1));
    assert_eq!(pfa(&["--help"]).status.code(), Some(0));
}

#[test]
fn fit_writes_one_summary_row_per_parameter() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path());
    let out = dir.path().join("fit");
    fit(&cfg, &out, &[]);
    for name in ["trace.csv", "summary.csv", "loadings_plot.csv", "effective.cfg"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    // K = 2, P = 3: five free loadings, three precisions, one interior cut-point.
    assert_eq!(summary.lines().count() - 1, 5 + 3 + 1);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count() - 1, 50);
}

#[test]
fn outputs_do_not_depend_on_run_or_workers() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    fit(&cfg, &a, &[]);
    fit(&cfg, &b, &[]);
    fit(&cfg, &c, &["--workers", "3"]);
    for name in ["trace.csv", "summary.csv", "loadings_plot.csv"] {
        assert!(same_file(&a.join(name), &b.join(name)), "{name} differs between runs");
        assert!(same_file(&a.join(name), &c.join(name)), "{name} differs with workers");
    }
}

#[test]
fn echoed_configuration_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path());
    let first = dir.path().join("first");
    fit(&cfg, &first, &["--seed", "9", "--thin", "5"]);
    let echoed = dir.path().join("echo.cfg");
    fs::copy(first.join("effective.cfg"), &echoed).unwrap();
    let second = dir.path().join("second");
    ok(&["fit", "--config", s(&echoed), "--out", s(&second)]);
    for name in ["trace.csv", "summary.csv"] {
        assert!(same_file(&first.join(name), &second.join(name)), "{name} differs");
    }
}

#[test]
fn summarize_matches_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path());
    let out = dir.path().join("fit");
    fit(&cfg, &out, &[]);
    let again = dir.path().join("again");
    ok(&["summarize", "--trace", s(&out.join("trace.csv")), "--out", s(&again)]);
    assert!(same_file(&out.join("summary.csv"), &again.join("summary.csv")));
}

#[test]
fn select_k_reports_every_candidate() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path());
    let out = dir.path().join("sel");
    ok(&[
        "select-k",
        "--config",
        s(&cfg),
        "--max-k",
        "3",
        "--points",
        "6",
        "--path-iterations",
        "300",
        "--out",
        s(&out),
    ]);
    let marginals = fs::read_to_string(out.join("marginals.csv")).unwrap();
    let rows: Vec<&str> = marginals.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let total: f64 = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for k in 1..=3 {
        let path = fs::read_to_string(out.join(format!("path_k{k}.csv"))).unwrap();
        assert_eq!(path.lines().count(), 7);
    }
    let summary = fs::read_to_string(out.join("path_summary.txt")).unwrap();
    assert!(summary.starts_with("best_k = "));
    assert_eq!(fs::read_to_string(out.join("bayes_factors.csv")).unwrap().lines().count(), 4);
}
