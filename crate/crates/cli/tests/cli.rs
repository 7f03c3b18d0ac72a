use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tqmc::flow::{ShapeGrid, TransportMap};
use tqmc::specfun::BaseKind;

fn tqmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tqmc")).args(args).output().expect("binary runs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tqmc(&args)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const BANANA: &str = r#"
seed = 3
[target]
name = "banana"
[flow]
K = 2
shape_bound = 10
[fit]
n_train = 64
restarts = 2
max_iter = 40
"#;

#[test]
fn fit_banana_writes_model_and_trace_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "banana.toml", BANANA);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run("fit", &cfg, &a, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run("fit", &cfg, &b, &["--quiet"]).status.success());
    for f in ["model.json", "fit_trace.json", "run_config.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("fit_trace.json")).unwrap()).unwrap();
    for key in ["objective_trace", "restart_chosen", "seed", "config"] {
        assert!(trace.get(key).is_some(), "{key}");
    }
    assert_eq!(trace["seed"], 3);
    TransportMap::load(a.join("model.json")).unwrap();
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "banana.toml", BANANA);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("fit", &cfg, &a, &["--seed", "3", "--quiet"]).status.success());
    assert!(run("fit", &cfg, &b, &["--seed", "4", "--quiet"]).status.success());
    assert_ne!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases = [
        ("missing_name.toml", "[target]\nd = 2\n"),
        ("unknown_key.toml", "[target]\nname = \"banana\"\ncolour = 1\n"),
        ("unknown_target.toml", "[target]\nname = \"rosenbrock\"\n"),
        ("bad_n.toml", "[target]\nname = \"banana\"\n[fit]\nn_train = 100\n"),
        ("bad_method.toml", "[target]\nname = \"banana\"\n[estimate]\nmethods = [\"QMC\"]\n"),
        ("missing_csv.toml", "[target]\nname = \"logistic\"\ncsv = \"nowhere.csv\"\n"),
    ];
    for (name, text) in cases {
        let cfg = write(dir.path(), name, text);
        let o = run("fit", &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let o = run("fit", &dir.path().join("absent.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(tqmc(&["fit"]).status.code(), Some(2));
}

#[test]
fn missing_target_name_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[target]\nd = 2\n");
    let o = run("fit", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("target.name"));
}

#[test]
fn subspace_reports_rank_one_for_a_shift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[target]\nname = \"gaussian\"\nmean = [1.0, 0.0, 0.0, 0.0, 0.0]\n");
    let out = dir.path().join("o");
    let o = run("subspace", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("r = 1"), "{}", stdout(&o));
    assert!(stdout(&o).contains("top eigenvalue ratio"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("subspace.json")).unwrap()).unwrap();
    assert_eq!(doc["r"], 1);
    let init = TransportMap::load(out.join("model_init.json")).unwrap();
    assert!(init.rotation().is_some());
}

#[test]
fn subspace_degenerate_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[target]\nname = \"gaussian\"\nd = 3\n");
    let o = run("subspace", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("r = 0"));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn subspace_rejects_bad_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[target]\nname = \"gaussian\"\nd = 3\n[flow]\nthreshold = 1.5\n");
    assert_eq!(run("subspace", &cfg, &dir.path().join("o"), &[]).status.code(), Some(2));
}

#[test]
fn estimate_with_identity_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.toml",
        "[target]\nname = \"gaussian\"\nd = 2\n[estimate]\nn = 1024\nfunctions = [\"x1\"]\n",
    );
    let model = dir.path().join("identity.json");
    TransportMap::identity(2, BaseKind::Gauss, 2, ShapeGrid::default()).save(&model).unwrap();
    let out = dir.path().join("o");
    let o = run("estimate", &cfg, &out, &["--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("estimates.csv")).unwrap();
    let mut rdr = csv_rows(&text);
    let header = rdr.remove(0);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rdr.len(), 1);
    let est: f64 = rdr[0][col("estimate")].parse().unwrap();
    let ess: f64 = rdr[0][col("ess")].parse().unwrap();
    assert!(est.abs() < 0.05, "{est}");
    assert!(ess > 0.0 && ess <= 1024.0 * (1.0 + 1e-12));
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn estimate_rejects_corrupt_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", "[target]\nname = \"gaussian\"\nd = 2\n");
    let model = write(dir.path(), "bad.json", "{\"format_version\": 1, \"d\": ");
    let o = run("estimate", &cfg, &dir.path().join("o"), &["--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run("estimate", &cfg, &dir.path().join("o"), &["--model", "does-not-exist.json"]);
    assert_eq!(o.status.code(), Some(2));
}

const GAUSS_QUICK: &str = r#"
seed = 5
[target]
name = "gaussian"
d = 2
[estimate]
functions = ["x1", "x1^2"]
n_grid = [64, 128, 256, 512, 1024]
replicates = 20
methods = ["MC", "RQMC"]
proposals = ["identity"]
baseline = "MC/identity"
"#;

#[test]
fn benchmark_quick_preset_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", GAUSS_QUICK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run("benchmark", &cfg, &a, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("slope"));
    assert!(run("benchmark", &cfg, &b, &["--quiet"]).status.success());
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("# tqmc-bench v1"));
    assert_eq!(summary.lines().count(), 2 + 2 * 5 * 2);
    assert_eq!(summary, fs::read_to_string(b.join("summary.csv")).unwrap());
    let raw = fs::read_to_string(a.join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 2 + 2 * 5 * 20 * 2);
    let red = fs::read_to_string(a.join("reductions.csv")).unwrap();
    assert!(red.lines().any(|l| l == "MC,identity,1024,x1,1"));
}

#[test]
fn benchmark_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", &GAUSS_QUICK.replace("\"RQMC\"]", "\"QMC\"]"));
    let o = run("benchmark", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("QMC"));
}

#[test]
fn json_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.json",
        r#"{"target": {"name": "gaussian", "mean": [0.5, 0.0]}, "estimate": {"n_grid": [64, 128], "replicates": 2, "proposals": ["identity", "prior"]}}"#,
    );
    let o = run("benchmark", &cfg, &dir.path().join("o"), &["--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn logistic_from_csv_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tqmc::targets::make_logistic_synthetic(3, 15, 2).unwrap();
    tqmc::targets::write_logistic_csv(dir.path().join("data.csv"), &data).unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "[target]\nname = \"logistic\"\ncsv = \"data.csv\"\n[estimate]\nn_grid = [64, 128]\nreplicates = 2\nproposals = [\"prior\", \"laplace\"]\nreference_n = 256\nreference_scrambles = 4\n",
    );
    let out = dir.path().join("o");
    let o = run("benchmark", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("reference.json").exists());
    assert!(stdout(&o).contains("no known moments"));
}
