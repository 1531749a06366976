use std::fs;
use std::process::Command;

use meancover::harness::{cmd_area, RunConfig};

const SMALL: &str = r#"
corpus = ["mono(1)", "omit(zeta=0.125,k=3)"]
seed = 7
[area]
radii = [0.5]
[tolerances]
quadrature = "depth=9,min_depth=4,budget=2e5,tol=1e-5"
counting_grid = 64
mc_samples = 20000
agreement = 0.05
"#;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_meancover")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, SMALL).unwrap();
    let out = dir.path().join("out");
    let (code, stdout) = run(&["area", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(out.join("report.json").exists() && out.join("area.csv").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "corpus = [\"poly[0,\"]\n").unwrap();
    assert_eq!(run(&["area", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["growth", "--config", "/nonexistent.toml"]).0, 2);

    // Too coarse to certify A(1) < π for the meromorphic example.
    let coarse = dir.path().join("coarse.toml");
    fs::write(
        &coarse,
        "[counterexample]\neps = [0.1]\n[tolerances]\ncounterexample_quadrature = \"depth=5,min_depth=4,budget=1e3,tol=1e-1\"\n",
    )
    .unwrap();
    assert_eq!(run(&["counterexample", "--config", coarse.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 1);
}

#[test]
fn reports_are_reproducible() {
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let a = serde_json::to_string(&cmd_area(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&cmd_area(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}
