use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const CONFIG: &str = r#"{
  "potential": {"kind": "quadratic"},
  "n": 96,
  "beta_rule": "N^-0.9",
  "seed": 5,
  "grid": {"cells": 64, "half_width": 4.0},
  "sampler": {"replicas": 3, "frames": 80},
  "analysis": {"ess_floor": 20},
  "verify": {"n": 64, "cells": 128, "splitting_configs": 4, "regularization_configs": 8, "dipoles": 3}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coulomb2d"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin()
        .current_dir(dir)
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cfg.json"), CONFIG).unwrap();
    d
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn archives(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn usage_and_missing_inputs_have_stable_codes() {
    let d = workspace();
    let p = d.path();
    assert_eq!(code(&run(p, &["--config", "absent.json", "equilibrium"])), 65);
    fs::write(p.join("bad.json"), r#"{"n": 3"#).unwrap();
    assert_eq!(code(&run(p, &["--config", "bad.json", "equilibrium"])), 64);
    fs::write(
        p.join("two.json"),
        r#"{"potential": {"kind": "quadratic"}, "n": 3, "beta": 1, "theta": 2}"#,
    )
    .unwrap();
    assert_eq!(code(&run(p, &["--config", "two.json", "equilibrium"])), 64);
    assert_eq!(code(&run(p, &["sample", "--bogus"])), 64);
    assert_eq!(code(&run(p, &["sample"])), 64);
    assert_eq!(code(&run(p, &["equilibrium"])), 64);
    assert_eq!(code(&run(p, &["--out-dir", "empty", "analyze"])), 65);
    assert_eq!(code(&run(p, &["--out-dir", "empty", "report"])), 65);
    assert_eq!(code(&run(p, &["--help"])), 0);
}

#[test]
fn sampling_is_reproducible_across_thread_counts() {
    let d = workspace();
    let p = d.path();
    let go = |out: &str, threads: &str, seed: &str| {
        let o = run(
            p,
            &[
                "--config",
                "cfg.json",
                "--out-dir",
                out,
                "--threads",
                threads,
                "--seed",
                seed,
                "sample",
                "--replicas",
                "2",
            ],
        );
        assert_eq!(code(&o), 0);
        archives(&p.join(out).join("archives"))
            .iter()
            .map(|a| sha(a))
            .collect::<Vec<_>>()
    };
    let a = go("a", "1", "9");
    let b = go("b", "8", "9");
    let c = go("c", "1", "10");
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    assert_ne!(a, c);

    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("a/manifest_sample.json")).unwrap()).unwrap();
    for f in m["outputs"].as_array().unwrap() {
        let path = Path::new(f["path"].as_str().unwrap());
        assert_eq!(f["sha256"].as_str().unwrap(), sha(&p.join(path)), "{path:?}");
    }
    assert_eq!(m["seed"], 9);
}

#[test]
fn flags_build_a_config_without_a_file() {
    let d = workspace();
    let p = d.path();
    let o = run(
        p,
        &[
            "--out-dir",
            "f",
            "sample",
            "--n",
            "32",
            "--beta",
            "0.05",
            "--burnin",
            "3200",
            "--thin",
            "320",
            "--steps",
            "16000",
            "--replicas",
            "1",
        ],
    );
    assert_eq!(code(&o), 0);
    let a = archives(&p.join("f/archives"));
    assert_eq!(a.len(), 1);
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("f/run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["n"], 32);
    assert_eq!(cfg["sampler"]["thinning"], 320);
}

#[test]
fn pipeline_writes_reports_and_curves() {
    let d = workspace();
    let p = d.path();
    let cfg = ["--config", "cfg.json", "--out-dir", "out"];
    let eq = run(p, &[&cfg[..], &["equilibrium"]].concat());
    assert_eq!(code(&eq), 0);
    assert!(String::from_utf8_lossy(&eq.stdout).contains("EL residual"));
    for f in [
        "mu_theta.bin",
        "mu_theta.json",
        "mu_v.bin",
        "mu_v.json",
        "equilibrium_report.json",
    ] {
        assert!(p.join("out").join(f).exists(), "{f}");
    }
    let first = sha(&p.join("out/mu_theta.bin"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("out/equilibrium_report.json")).unwrap()).unwrap();
    for k in ["pair", "confinement", "cross", "background", "entropy"] {
        assert!(report["energy"]["breakdown"][k].is_number(), "{k}");
    }

    assert_eq!(code(&run(p, &[&cfg[..], &["sample"]].concat())), 0);
    assert_eq!(archives(&p.join("out/archives")).len(), 3);
    assert_eq!(code(&run(p, &[&cfg[..], &["analyze"]].concat())), 0);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("out/analysis_report.json")).unwrap()).unwrap();
    assert!(doc["report"]["one_point"]["ratio"].is_array());
    assert!((doc["report"]["poisson"]["lambda"].as_f64().unwrap() - 2.0 / std::f64::consts::PI).abs() < 0.01);
    let csv = fs::read_to_string(p.join("out/concentration.csv")).unwrap();
    assert!(csv.starts_with("threshold,empirical,ci_lo,ci_hi,bound\n"));

    assert_eq!(code(&run(p, &["--out-dir", "out", "report"])), 0);
    for f in ["concentration.csv", "overcrowding.csv", "checks.csv"] {
        assert!(p.join("out/report").join(f).exists(), "{f}");
    }

    // Reruns reproduce the measure bit for bit.
    assert_eq!(code(&run(p, &[&cfg[..], &["equilibrium"]].concat())), 0);
    assert_eq!(sha(&p.join("out/mu_theta.bin")), first);

    fs::write(
        p.join("strict.json"),
        CONFIG.replace(r#""ess_floor": 20"#, r#""ess_floor": 1e9"#),
    )
    .unwrap();
    assert_eq!(
        code(&run(p, &["--config", "strict.json", "--out-dir", "out", "analyze"])),
        4
    );

    fs::remove_file(p.join("out/mu_theta.json")).unwrap();
    assert_eq!(code(&run(p, &[&cfg[..], &["analyze"]].concat())), 65);
}

#[test]
fn verify_reports_and_fails_on_broken_identities() {
    let d = workspace();
    let p = d.path();
    let o = run(p, &["--config", "cfg.json", "--out-dir", "v", "verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("v/verify_report.json")).unwrap()).unwrap();
    assert!(r["min_energy"]["floor"].as_f64().unwrap() > 0.0);
    assert!(r["splitting"]["refinement"].as_f64().unwrap() > 3.0);

    // A vanishing constant makes the regularization bound unattainable.
    fs::write(
        p.join("tight.json"),
        CONFIG.replace(r#""dipoles": 3"#, r#""dipoles": 3, "c_hat": 1e-9"#),
    )
    .unwrap();
    assert_eq!(
        code(&run(p, &["--config", "tight.json", "--out-dir", "t", "verify"])),
        5
    );
}
