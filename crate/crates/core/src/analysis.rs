//! The estimator suite run over a set of sample archives.
//!
//! [`analyze`] turns replicas of one gas into an [`AnalysisReport`]: count
//! statistics in the microscopic window, correlation functions, the
//! one-point ratio, tail curves and exponential moments. Every check carries
//! its own pass flag; [`AnalysisReport::checks`] collects them.

use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::equilibrium::ThermalSolution;
use crate::geometry::Region;
use crate::sampler::{confinement_stat, overcrowding_floor, overcrowding_stat, ConfinementStat, SampleArchive};
use crate::stats::{
    self, bulk_bins, concentration_tail, count_correlation, estimate_correlation, laplace_functional, linear_statistic,
    local_process, one_point_ratio, poisson_count_test, smoothing_moment_check, thermal_weight_moment, window_counts,
    Bins, CorrelationEstimate, CountCorrelation, LaplaceEstimate, LinearStatisticReport, OnePointRatio,
    PointProcessSample, PoissonTest, SmoothingMoment, TailCurve, TwoSidedMoment, Window,
};
use crate::{Error, Result, Vec2};

/// Largest total-variation distance accepted for the window-count law.
pub const POISSON_TV_MAX: f64 = 0.05;
/// Smallest chi-square p-value accepted for the window-count law.
pub const POISSON_P_MIN: f64 = 0.01;
/// Width of the acceptance band for correlation-type checks, in standard
/// errors.
pub const K_SIGMA: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountLaw {
    /// Intensity tested against.
    pub lambda: f64,
    pub test: PoissonTest,
    pub passes: bool,
}

impl CountLaw {
    fn new(counts: &[usize], lambda: f64, area: f64) -> Result<Self> {
        let test = poisson_count_test(counts, lambda * area)?;
        let passes = test.total_variation <= POISSON_TV_MAX && test.p_value >= POISSON_P_MIN;
        Ok(Self { lambda, test, passes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub point: Vec2,
    /// `C` in the asserted range `T >= C log N`. A free choice.
    pub c_hat: f64,
    pub curve: TailCurve,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overcrowding {
    pub centre: Vec2,
    pub radius: f64,
    pub q_floor: f64,
    pub curve: TailCurve,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub region: Region,
    pub stat: ConfinementStat,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub t: f64,
    pub eta: f64,
    pub result: SmoothingMoment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Informational checks are reported but do not gate the run.
    pub gating: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub beta: f64,
    pub theta: f64,
    pub replicas: usize,
    pub frames: usize,
    pub z_bar: Vec2,
    pub window: Window,
    /// Pooled effective sample size of the unit-window counts.
    pub ess: f64,
    pub ess_floor: f64,
    pub energy_ess: f64,
    /// Counts in the unit window against `Poisson(mu_V(z_bar))`.
    pub poisson: CountLaw,
    /// The same counts against `Poisson(mu_theta(z_bar))`.
    pub poisson_thermal: CountLaw,
    /// Counts in two disjoint unit windows.
    pub disjoint_windows: [Window; 2],
    pub disjoint_correlation: CountCorrelation,
    pub r1: CorrelationEstimate,
    pub r2: CorrelationEstimate,
    pub laplace: LaplaceEstimate,
    pub one_point: OnePointRatio,
    pub concentration: Concentration,
    pub overcrowding: Overcrowding,
    pub confinement: Confinement,
    pub linear_statistic: LinearStatisticReport,
    pub thermal_weight: TwoSidedMoment,
    pub smoothing: Smoothing,
}

impl AnalysisReport {
    pub fn checks(&self) -> Vec<Check> {
        let c = |name: &str, passed: bool, gating: bool| Check {
            name: name.into(),
            passed,
            gating,
        };
        let r1_ok = self
            .r1
            .values
            .iter()
            .zip(&self.r1.std_err)
            .all(|(v, e)| (v - self.poisson.lambda).abs() <= K_SIGMA * e);
        vec![
            c("ess", self.ess >= self.ess_floor, true),
            c("poisson_count", self.poisson.passes, true),
            c("poisson_count_thermal", self.poisson_thermal.passes, false),
            c(
                "disjoint_count_correlation",
                self.disjoint_correlation.within(K_SIGMA),
                true,
            ),
            c("r1_intensity", r1_ok, false),
            c("laplace_functional", self.laplace.agrees(K_SIGMA), false),
            c("one_point_ratio", self.one_point.passes(), true),
            c("concentration", self.concentration.passes, true),
            c("overcrowding", self.overcrowding.passes, true),
            c("confinement", self.confinement.passes, false),
            c("linear_statistic", self.linear_statistic.passes, true),
            c(
                "thermal_weight",
                self.thermal_weight.passes || !self.thermal_weight.applicable,
                true,
            ),
            c("smoothing_moment", self.smoothing.result.passes, true),
        ]
    }

    pub fn passes(&self) -> bool {
        self.checks().iter().all(|c| c.passed || !c.gating)
    }

    /// Named tail curves for CSV export.
    pub fn curves(&self) -> Vec<(&'static str, &TailCurve)> {
        vec![
            ("concentration", &self.concentration.curve),
            ("overcrowding", &self.overcrowding.curve),
        ]
    }
}

fn increasing(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    v
}

/// Runs every estimator. `lambda` is the limiting intensity `mu_V(z_bar)`
/// from the equilibrium solver; `mu` the thermal measure the archives were
/// sampled against.
pub fn analyze(
    archives: &[SampleArchive],
    mu: &ThermalSolution,
    lambda: f64,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport> {
    let first = archives
        .first()
        .ok_or_else(|| Error::InvalidParameter("no archives".into()))?;
    let n = first.n();
    let beta = first.header.config.beta;
    for a in archives {
        if a.n() != n || a.header.config.beta != beta {
            return Err(Error::InvalidParameter("archives come from different gases".into()));
        }
    }
    let theta = beta * n as f64;
    if (mu.theta - theta).abs() > 1e-9 * theta {
        return Err(Error::Precondition(format!(
            "mu_theta solved at theta = {}, archives have theta = {theta}",
            mu.theta
        )));
    }
    let z = cfg.z_bar;
    let window = Window::centered(cfg.window_half_width);
    let groups: Vec<Vec<PointProcessSample>> = archives
        .iter()
        .map(|a| a.frames().map(|f| local_process(f, z, window)).collect())
        .collect();
    let all: Vec<PointProcessSample> = groups.iter().flatten().cloned().collect();
    let frames = all.len();
    if frames < stats::MIN_COUNT_FRAMES {
        return Err(Error::InsufficientSamples {
            estimator: "poisson_count",
            required: stats::MIN_COUNT_FRAMES,
            available: frames as f64,
        });
    }

    let unit = Window::unit();
    let series: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|s| s.count_in(&unit) as f64).collect())
        .collect();
    let ess = stats::pooled_ess(&series);
    stats::require_ess("poisson_count", ess, cfg.ess_floor)?;
    let energies: Vec<&[f64]> = archives.iter().map(|a| a.header.frame_energies.as_slice()).collect();
    let energy_ess = stats::pooled_ess(&energies);

    let counts = window_counts(&all, &unit);
    let poisson = CountLaw::new(&counts, lambda, unit.area())?;
    let poisson_thermal = CountLaw::new(&counts, mu.density_at(z), unit.area())?;

    let disjoint_windows = [
        unit.translated(Vec2::new(-1.0, 0.0)),
        unit.translated(Vec2::new(1.0, 0.0)),
    ];
    let disjoint_correlation = count_correlation(
        &window_counts(&all, &disjoint_windows[0]),
        &window_counts(&all, &disjoint_windows[1]),
    )?;

    let r1 = estimate_correlation(
        &groups,
        1,
        Bins {
            region: window,
            nx: 4,
            ny: 4,
        },
    )?;
    let r2 = estimate_correlation(
        &groups,
        2,
        Bins {
            region: Window::centered(2.0),
            nx: 8,
            ny: 8,
        },
    )?;
    let laplace = laplace_functional(&all, |p| if unit.contains(p) { 0.5 } else { 0.0 }, lambda)?;

    let frame_groups: Vec<Vec<&[Vec2]>> = archives.iter().map(|a| a.frames().collect()).collect();
    let one_point = one_point_ratio(
        &frame_groups,
        mu,
        bulk_bins(z, cfg.bulk_half_width, cfg.bulk_bins)?,
        beta,
        cfg.gamma,
        cfg.one_point_c_hat,
    )?;

    let frames_iter = || archives.iter().flat_map(|a| a.frames());
    let nf = n as f64;
    let t_floor = cfg.concentration_c_hat * nf.ln();
    let t_grid: Vec<f64> = [0.25, 0.5, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0]
        .iter()
        .map(|s| s * t_floor)
        .collect();
    let curve = concentration_tail(frames_iter(), mu, beta, &[z], &t_grid, cfg.concentration_c_hat)?;
    let concentration = Concentration {
        point: z,
        c_hat: cfg.concentration_c_hat,
        passes: curve.passes(),
        curve,
    };

    let radius = nf.powf(-0.5);
    let q_floor = overcrowding_floor(beta, n, radius, cfg.overcrowding_c_hat);
    let mut q = vec![1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];
    q.extend([1.0, 1.5, 2.0, 4.0].iter().map(|s| (s * q_floor).ceil()));
    let curve = overcrowding_stat(archives, z, radius, &increasing(q), q_floor)?;
    let overcrowding = Overcrowding {
        centre: z,
        radius,
        q_floor,
        passes: curve.passes(),
        curve,
    };

    let half = mu.grid().extent().x.min(mu.grid().extent().y) * 0.5;
    let region = Region::Disk {
        center: mu.grid().origin + mu.grid().extent() * 0.5,
        radius: 0.75 * half,
    };
    let stat = confinement_stat(archives, &region, mu)?;
    let confinement = Confinement {
        region,
        passes: stat.passes(1.0),
        stat,
    };

    let linear_statistic = linear_statistic(frames_iter(), mu, beta, |p| p.x, cfg.c_hat)?;
    let thermal_weight = thermal_weight_moment(frames_iter(), mu, beta, 1.0, cfg.c_hat)?;
    let eta = (1.0 / nf).min(1.0 / (nf * beta).sqrt());
    let smoothing = Smoothing {
        t: 1.0,
        eta,
        result: smoothing_moment_check(frames_iter(), mu, beta, z, 1.0, eta, cfg.c_hat)?,
    };

    Ok(AnalysisReport {
        n,
        beta,
        theta,
        replicas: archives.len(),
        frames,
        z_bar: z,
        window,
        ess,
        ess_floor: cfg.ess_floor,
        energy_ess,
        poisson,
        poisson_thermal,
        disjoint_windows,
        disjoint_correlation,
        r1,
        r2,
        laplace,
        one_point,
        concentration,
        overcrowding,
        confinement,
        linear_statistic,
        thermal_weight,
        smoothing,
    })
}
