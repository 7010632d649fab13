//! Deterministic identity checks: the splitting formula, the Fourier energy
//! oracle, the regularization inequality and the min-energy floor.

use serde::{Deserialize, Serialize};

use crate::energy::{
    fourier_energy_with, min_energy_check, min_energy_family, signed_energy, smooth_dipole, splitting_terms,
    ParticleConfiguration, SmoothingCorrection,
};
use crate::equilibrium::{solve_thermal_with, CoulombOperator, ThermalOptions, ThermalSolution};
use crate::kernel::SmearingRadius;
use crate::parallel::{self, Execution};
use crate::rng::{stream, Purpose};
use crate::sampler::draw_from_density;
use crate::{GridSpec, PotentialSpec, Result, SignedGridMeasure, Vec2};

/// Recorded `min rhs_ratio` over [`min_energy_family`].
pub const MIN_ENERGY_FLOOR: f64 = 2.491_798_878_0;
/// Relative agreement required of the recorded floor.
pub const MIN_ENERGY_FLOOR_TOLERANCE: f64 = 0.01;
pub const SPLITTING_TOLERANCE: f64 = 5e-3;
/// Required residual reduction when the cell size halves.
pub const SPLITTING_REFINEMENT: f64 = 3.0;
pub const ORACLE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    /// `theta` for the splitting check; `N^{1/4}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub half_width: f64,
    /// Cells per side of the fine grid; the coarse grid has half as many.
    pub cells: usize,
    pub splitting_configs: usize,
    pub regularization_configs: usize,
    /// `eta = eta_scale N^{-1/2}`.
    pub eta_scale: f64,
    pub c_hat: f64,
    pub dipoles: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 256,
            theta: None,
            half_width: 3.5,
            cells: 512,
            splitting_configs: 20,
            regularization_configs: 100,
            eta_scale: 0.1,
            c_hat: crate::energy::C_HAT_DEFAULT,
            dipoles: 10,
        }
    }
}

impl VerifyConfig {
    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or((self.n as f64).powf(0.25))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingStudy {
    pub theta: f64,
    pub cells: [usize; 2],
    /// `|H_N - (mean field + log density + next order)| / |H_N|` per
    /// configuration, on the coarse and fine grid.
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub worst_fine: f64,
    /// `max coarse / max fine`.
    pub refinement: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleStudy {
    pub relative_errors: Vec<f64>,
    pub worst: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationStudy {
    pub eta: f64,
    pub c_hat: f64,
    pub configs: usize,
    pub violations: usize,
    /// `max(gap - bound)`; negative when every configuration holds.
    pub worst_margin: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinEnergyStudy {
    pub labels: Vec<String>,
    pub ratios: Vec<f64>,
    pub floor: f64,
    pub recorded: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub splitting: SplittingStudy,
    pub oracle: OracleStudy,
    pub regularization: RegularizationStudy,
    pub min_energy: MinEnergyStudy,
}

impl VerifyReport {
    pub fn passes(&self) -> bool {
        self.splitting.passes && self.oracle.passes && self.regularization.passes && self.min_energy.passes
    }
}

fn configurations(
    mu: &ThermalSolution,
    n: usize,
    count: usize,
    seed: u64,
    index: u64,
) -> Result<Vec<ParticleConfiguration>> {
    let mut rng = stream(seed, Purpose::Verify, index);
    (0..count)
        .map(|_| ParticleConfiguration::new(draw_from_density(&mu.mu_theta, n, &mut rng)?))
        .collect()
}

/// Splitting residuals on grids of `cells / 2` and `cells` per side, for
/// configurations drawn iid from the fine-grid `mu_theta`.
pub fn splitting_study(
    v: &PotentialSpec,
    cfg: &VerifyConfig,
    seed: u64,
    exec: Execution,
) -> Result<(SplittingStudy, ThermalSolution)> {
    let theta = cfg.theta();
    let cells = [cfg.cells / 2, cfg.cells];
    let mut sols = Vec::with_capacity(2);
    for c in cells {
        let op = CoulombOperator::new(GridSpec::centered(cfg.half_width, c)?, exec);
        sols.push(solve_thermal_with(&op, v, theta, &ThermalOptions::default(), None)?);
    }
    let xs = configurations(&sols[1], cfg.n, cfg.splitting_configs, seed, 0)?;
    let rel = |sol: &ThermalSolution| -> Result<Vec<f64>> {
        xs.iter()
            .map(|x| splitting_terms(exec, x, v, sol).map(|t| t.relative()))
            .collect()
    };
    let coarse = rel(&sols[0])?;
    let fine = rel(&sols[1])?;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let worst_fine = max(&fine);
    let refinement = max(&coarse) / worst_fine;
    let fine_sol = sols.pop().expect("two solutions");
    Ok((
        SplittingStudy {
            theta,
            cells,
            coarse,
            fine,
            worst_fine,
            refinement,
            passes: worst_fine <= SPLITTING_TOLERANCE && refinement >= SPLITTING_REFINEMENT,
        },
        fine_sol,
    ))
}

/// Smooth zero-mass dipoles of varying separation, width and orientation.
pub fn dipole_family(count: usize) -> Result<Vec<SignedGridMeasure>> {
    let grid = GridSpec::centered(2.0, 256)?;
    (0..count)
        .map(|k| {
            let k = k as f64;
            smooth_dipole(grid, Vec2::polar(0.2 + 0.04 * k, 0.6 * k), 0.3 + 0.02 * k)
        })
        .collect()
}

/// Fourier-side against real-space energy.
pub fn oracle_study(count: usize, exec: Execution) -> Result<OracleStudy> {
    let relative_errors = dipole_family(count)?
        .iter()
        .map(|nu| {
            let f = fourier_energy_with(exec, nu)?;
            let r = signed_energy(nu);
            Ok(((f - r) / r).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst = relative_errors.iter().copied().fold(0.0, f64::max);
    Ok(OracleStudy {
        relative_errors,
        worst,
        passes: worst <= ORACLE_TOLERANCE,
    })
}

/// Regularization gap against its bound for configurations drawn iid from
/// `mu`.
pub fn regularization_study(
    mu: &ThermalSolution,
    cfg: &VerifyConfig,
    seed: u64,
    exec: Execution,
) -> Result<RegularizationStudy> {
    let eta = cfg.eta_scale / (cfg.n as f64).sqrt();
    let corr = SmoothingCorrection::new(exec, &mu.mu_theta, SmearingRadius::new(eta)?, cfg.c_hat)?;
    let xs = configurations(mu, cfg.n, cfg.regularization_configs, seed, 1)?;
    let margins = parallel::map_collect(exec, 0..xs.len(), |i| {
        corr.regularization_gap(&xs[i]).map(|g| g.gap - g.bound)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let violations = margins.iter().filter(|m| **m > 0.0).count();
    Ok(RegularizationStudy {
        eta,
        c_hat: cfg.c_hat,
        configs: xs.len(),
        violations,
        worst_margin: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        passes: violations == 0,
    })
}

pub fn min_energy_study() -> Result<MinEnergyStudy> {
    let mut labels = Vec::new();
    let mut ratios = Vec::new();
    for c in min_energy_family()? {
        ratios.push(min_energy_check(&c.nu, c.eta, c.delta)?.rhs_ratio);
        labels.push(c.label);
    }
    let floor = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MinEnergyStudy {
        labels,
        ratios,
        floor,
        recorded: MIN_ENERGY_FLOOR,
        passes: floor > 0.0 && ((floor - MIN_ENERGY_FLOOR) / MIN_ENERGY_FLOOR).abs() <= MIN_ENERGY_FLOOR_TOLERANCE,
    })
}

/// All four checks. The regularization check reuses the fine-grid
/// `mu_theta` of the splitting check.
pub fn run_verify(v: &PotentialSpec, cfg: &VerifyConfig, seed: u64, exec: Execution) -> Result<VerifyReport> {
    let (splitting, mu) = splitting_study(v, cfg, seed, exec)?;
    Ok(VerifyReport {
        config: cfg.clone(),
        oracle: oracle_study(cfg.dipoles, exec)?,
        regularization: regularization_study(&mu, cfg, seed, exec)?,
        min_energy: min_energy_study()?,
        splitting,
    })
}
