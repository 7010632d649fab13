use coulomb2d::config::{BetaRule, RunConfig};
use coulomb2d::verify::VerifyConfig;

const SHIPPED: &str = include_str!("../../../configs/quadratic.json");

#[test]
fn shipped_config_parses() {
    let cfg = RunConfig::from_json(SHIPPED).unwrap();
    assert_eq!(cfg.n, 1024);
    let beta = cfg.beta().unwrap();
    assert!((beta - 1024f64.powf(-0.9)).abs() < 1e-15);
    let g = cfg.gas_config().unwrap();
    assert_eq!(g.burn_in, 200 * 1024);
    assert_eq!(g.thinning, 10 * 1024);
    assert_eq!(g.frame_count(), 200);
    assert_eq!(cfg.grid_spec().unwrap().nx, 128);
    // Canonical form survives a reparse.
    let again = RunConfig::from_json(&cfg.canonical_json()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn verify_defaults_and_partial_blocks() {
    let d = VerifyConfig::default();
    assert_eq!(
        (d.n, d.cells, d.splitting_configs, d.regularization_configs),
        (256, 512, 20, 100)
    );
    assert_eq!(d.c_hat, 10.0);
    let partial: VerifyConfig = serde_json::from_str(r#"{"cells": 128}"#).unwrap();
    assert_eq!(partial.cells, 128);
    assert_eq!(partial.n, 256);
    assert!(serde_json::from_str::<VerifyConfig>(r#"{"cell": 128}"#).is_err());
}

#[test]
fn temperature_is_given_exactly_once() {
    let base = r#"{"potential": {"kind": "quadratic"}, "n": 100"#;
    assert!(RunConfig::from_json(&format!("{base}}}")).is_err());
    assert!(RunConfig::from_json(&format!(r#"{base}, "beta": 0.1, "theta": 3}}"#)).is_err());
    let t = RunConfig::from_json(&format!(r#"{base}, "theta": 5}}"#)).unwrap();
    assert!((t.beta().unwrap() - 0.05).abs() < 1e-15);
    assert!(RunConfig::from_json(&format!(r#"{base}, "beta": -1}}"#)).is_err());
    assert!(RunConfig::from_json(&format!(r#"{base}, "beta": 1, "extra": 0}}"#)).is_err());
}

#[test]
fn beta_rules() {
    let r: BetaRule = "N^-0.5".parse().unwrap();
    assert!((r.beta(100).unwrap() - 0.1).abs() < 1e-15);
    let r: BetaRule = "2*N^{-3/4}".parse().unwrap();
    assert!((r.beta(16).unwrap() - 0.25).abs() < 1e-15);
    let r: BetaRule = "1/(sqrt(N)*log(N))".parse().unwrap();
    assert!((r.beta(100).unwrap() - 1.0 / (10.0 * 100f64.ln())).abs() < 1e-15);
    assert!("N^".parse::<BetaRule>().is_err());
    let shown: BetaRule = r.to_string().parse().unwrap();
    assert_eq!(shown, r);
}
