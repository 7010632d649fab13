//! Run configuration (JSON) and the `beta_rule` grammar.
//!
//! ```json
//! {
//!   "potential": {"kind": "quadratic"},
//!   "n": 1024,
//!   "beta_rule": "N^{-3/4}",
//!   "seed": 7,
//!   "grid": {"cells": 256, "half_width": 3.5},
//!   "sampler": {"replicas": 8, "frames": 200},
//!   "analysis": {"window_half_width": 4.0}
//! }
//! ```
//!
//! Exactly one of `beta`, `beta_rule` and `theta` fixes the temperature.

use crate::equilibrium::default_grid;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::GridSpec;
use crate::potential::PotentialSpec;
use crate::sampler::{GasConfig, DEFAULT_AUDIT_EVERY};
use crate::stats::{CONCENTRATION_C_HAT, DEFAULT_WINDOW_HALF_WIDTH};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// `beta` as a function of `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaRule {
    /// `c N^p`.
    Power { c: f64, p: f64 },
    /// `c / (sqrt(N) log N)`, the edge of the intermediate regime.
    Critical { c: f64 },
}

impl BetaRule {
    pub fn beta(&self, n: usize) -> Result<f64> {
        let nf = n as f64;
        let b = match *self {
            BetaRule::Power { c, p } => c * nf.powf(p),
            BetaRule::Critical { c } => c / (nf.sqrt() * nf.ln()),
        };
        if b.is_finite() && b > 0.0 {
            Ok(b)
        } else {
            Err(Error::InvalidParameter(format!(
                "beta rule {self} gives beta = {b} at N = {n}"
            )))
        }
    }
}

impl fmt::Display for BetaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BetaRule::Power { c, p } => write!(f, "{c}*N^{p}"),
            BetaRule::Critical { c } => write!(f, "{c}/(sqrt(N)*log(N))"),
        }
    }
}

fn number(s: &str) -> Option<f64> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')').trim();
    if s.is_empty() {
        return None;
    }
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (number(a)?, number(b)?);
        return (b != 0.0).then(|| a / b);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn coefficient(s: &str) -> Option<f64> {
    let s = s.trim().trim_end_matches(['*', '·']).trim();
    if s.is_empty() {
        Some(1.0)
    } else {
        number(s)
    }
}

impl FromStr for BetaRule {
    type Err = Error;

    /// Accepts `c*N^p` (`N^{-3/4}`, `0.5*N^(-0.9)`, `N^-1`) and
    /// `c/(sqrt(N)*log(N))` (also `c/(√N log N)`).
    fn from_str(raw: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unrecognised beta rule '{raw}'"));
        let s: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        let s = s
            .replace("√N", "sqrt(N)")
            .replace("ln(N)", "log(N)")
            .replace("logN", "log(N)");
        let s = s.replace("sqrtN", "sqrt(N)");
        for denom in ["/(sqrt(N)*log(N))", "/(sqrt(N)log(N))", "/sqrt(N)/log(N)"] {
            if let Some(head) = s.strip_suffix(denom) {
                let c = if head.is_empty() {
                    1.0
                } else {
                    number(head).ok_or_else(bad)?
                };
                return Ok(BetaRule::Critical { c });
            }
        }
        let (head, exp) = s.split_once("N^").ok_or_else(bad)?;
        let exp = exp.trim_start_matches('{').trim_end_matches('}');
        let p = number(exp).ok_or_else(bad)?;
        let c = coefficient(head).ok_or_else(bad)?;
        Ok(BetaRule::Power { c, p })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Half-width of the square grid; defaults to a multiple of the
    /// predicted support radius.
    #[serde(default)]
    pub half_width: Option<f64>,
}

fn default_cells() -> usize {
    256
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cells: default_cells(),
            half_width: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default = "default_frames")]
    pub frames: u64,
    /// Overrides: burn-in defaults to `200 N`, thinning to `10 N`, and steps
    /// to `burn_in + frames * thinning`.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default)]
    pub thinning: Option<u64>,
    #[serde(default)]
    pub proposal_scale: Option<f64>,
    #[serde(default = "default_audit")]
    pub audit_every: u64,
}

fn default_replicas() -> u64 {
    8
}
fn default_frames() -> u64 {
    200
}
fn default_audit() -> u64 {
    DEFAULT_AUDIT_EVERY
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            replicas: default_replicas(),
            frames: default_frames(),
            steps: None,
            burn_in: None,
            thinning: None,
            proposal_scale: None,
            audit_every: default_audit(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Centre of the microscopic window, in original coordinates.
    #[serde(default)]
    pub z_bar: Vec2,
    #[serde(default = "default_window")]
    pub window_half_width: f64,
    /// Constant in the smoothing, regularization and moment bounds.
    #[serde(default = "default_c_hat")]
    pub c_hat: f64,
    /// `C` in `T >= C log N` for the concentration tail.
    #[serde(default = "default_conc")]
    pub concentration_c_hat: f64,
    /// `C` in the overcrowding floor `Q >= C (1/beta + N R^2)`.
    #[serde(default = "default_one")]
    pub overcrowding_c_hat: f64,
    /// `gamma` in the one-point bias allowance `C beta N^{(1+gamma)/2}`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub one_point_c_hat: f64,
    /// Half-width (original coordinates) and bins per side of the bulk
    /// region for the one-point ratio.
    #[serde(default = "default_bulk")]
    pub bulk_half_width: f64,
    #[serde(default = "default_bulk_bins")]
    pub bulk_bins: usize,
    #[serde(default = "default_ess_floor")]
    pub ess_floor: f64,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW_HALF_WIDTH
}
fn default_c_hat() -> f64 {
    crate::energy::C_HAT_DEFAULT
}
fn default_conc() -> f64 {
    CONCENTRATION_C_HAT
}
fn default_one() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.1
}
fn default_bulk() -> f64 {
    0.3
}
fn default_bulk_bins() -> usize {
    4
}
fn default_ess_floor() -> f64 {
    crate::stats::ESS_FLOOR
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all analysis fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_rule: Option<String>,
    /// Solve `mu_theta` at this `theta` directly (equilibrium runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub verify: crate::verify::VerifyConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Compact JSON with fields in declaration order, used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        let set = [self.beta.is_some(), self.beta_rule.is_some(), self.theta.is_some()];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(Error::InvalidParameter(
                "exactly one of beta, beta_rule and theta must be given".into(),
            ));
        }
        if self.grid.cells < 8 {
            return Err(Error::InvalidParameter("grid needs at least 8 cells per side".into()));
        }
        if let Some(h) = self.grid.half_width {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter(format!("grid half_width {h} must be positive")));
            }
        }
        self.beta()?;
        Ok(())
    }

    pub fn beta(&self) -> Result<f64> {
        let b = match (&self.beta, &self.beta_rule, &self.theta) {
            (Some(b), _, _) => *b,
            (_, Some(rule), _) => rule.parse::<BetaRule>()?.beta(self.n)?,
            (_, _, Some(t)) => t / self.n as f64,
            _ => return Err(Error::InvalidParameter("no temperature given".into())),
        };
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidParameter(format!("beta = {b} must be positive")));
        }
        Ok(b)
    }

    pub fn theta(&self) -> Result<f64> {
        Ok(self.theta.unwrap_or(self.beta()? * self.n as f64))
    }

    /// The grid for `mu_theta`. Hotter gases spread further, so the default
    /// half-width grows with `1 / sqrt(theta)`.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        let cells = self.grid.cells;
        match self.grid.half_width {
            Some(h) => GridSpec::centered(h, cells),
            None => {
                let theta = self.theta()?;
                let margin = 1.5 + 3.0 / theta.sqrt();
                default_grid(&self.potential, margin, cells)
            }
        }
    }

    pub fn gas_config(&self) -> Result<GasConfig> {
        let mut g = GasConfig::new(
            self.n,
            self.beta()?,
            self.potential.clone(),
            self.seed,
            self.sampler.frames,
        );
        g.beta_rule = self.beta_rule.clone();
        if let Some(b) = self.sampler.burn_in {
            g.burn_in = b;
        }
        if let Some(t) = self.sampler.thinning {
            g.thinning = t;
        }
        g.steps = self
            .sampler
            .steps
            .unwrap_or(g.burn_in + self.sampler.frames * g.thinning);
        g.proposal_scale = self.sampler.proposal_scale;
        g.audit_every = self.sampler.audit_every;
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_rules_parse() {
        let close = |rule: &str, n: usize, want: f64| {
            let b = rule.parse::<BetaRule>().unwrap().beta(n).unwrap();
            assert!((b - want).abs() < 1e-12 * want, "{rule}: {b} vs {want}");
        };
        close("N^{-3/4}", 256, 256f64.powf(-0.75));
        close("N^-0.9", 2048, 2048f64.powf(-0.9));
        close("0.5*N^(-1)", 100, 0.005);
        close("2 N^{1/2}", 4, 4.0);
        let crit = 1.0 / (16.0 * 256f64.ln());
        close("0.5/(sqrt(N)*log(N))", 256, 0.5 * crit);
        close("1/(√N log N)", 256, crit);
        close("/(sqrt(N)*log(N))", 256, crit);
        assert!("N**2".parse::<BetaRule>().is_err());
        assert!("exp(N)".parse::<BetaRule>().is_err());
    }

    #[test]
    fn exactly_one_temperature() {
        let base = r#"{"potential": {"kind": "quadratic"}, "n": 16"#;
        assert!(RunConfig::from_json(&format!("{base}}}")).is_err());
        assert!(RunConfig::from_json(&format!(r#"{base}, "beta": 1, "theta": 2}}"#)).is_err());
        let c = RunConfig::from_json(&format!(r#"{base}, "beta_rule": "N^-1"}}"#)).unwrap();
        assert!((c.theta().unwrap() - 1.0).abs() < 1e-12);
        assert!(RunConfig::from_json(&format!(r#"{base}, "beta": 1, "bogus": 0}}"#)).is_err());
    }
}
