//! Point-process diagnostics on sampled configurations.
//!
//! Microscopic quantities live in rescaled coordinates `sqrt(N) (x - z)`.
//! Checks against the paper's inequalities are one-sided and CI-adjusted: a
//! check fails only when the lower end of the empirical confidence interval
//! exceeds the bound.

use crate::energy::{ParticleConfiguration, SmoothingCorrection};
use crate::equilibrium::ThermalSolution;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{GridField, GridMeasure, GridSpec};
use crate::kernel::{psi_smeared_g, SmearingRadius};
use crate::parallel::Execution;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson as PoissonPmf};
use std::fmt::Write as _;

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.576;
/// Estimators refuse to report below this effective sample size.
pub const ESS_FLOOR: f64 = 100.0;
pub const MIN_COUNT_FRAMES: usize = 200;
pub const DEFAULT_WINDOW_HALF_WIDTH: f64 = 4.0;
/// Default constant in `T >= C log N` for the concentration tail.
pub const CONCENTRATION_C_HAT: f64 = 4.0;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Integrated autocorrelation time `1 + 2 sum rho_k`, truncated by Geyer's
/// initial positive sequence rule. At least 1.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let m = series.len();
    if m < 4 {
        return 1.0;
    }
    let mu = mean(series);
    let c0 = series.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let rho = |k: usize| {
        series[..m - k]
            .iter()
            .zip(&series[k..])
            .map(|(a, b)| (a - mu) * (b - mu))
            .sum::<f64>()
            / (m as f64 * c0)
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < m {
        // Pair sums are positive and decreasing for a reversible chain.
        let gamma = (rho(k) + rho(k + 1)).min(prev);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        prev = gamma;
        k += 2;
    }
    tau.max(1.0)
}

pub fn effective_sample_size(series: &[f64]) -> f64 {
    series.len() as f64 / integrated_autocorrelation(series)
}

/// Summed ESS of independent chains.
pub fn pooled_ess<S: AsRef<[f64]>>(chains: &[S]) -> f64 {
    chains.iter().map(|c| effective_sample_size(c.as_ref())).sum()
}

pub fn require_ess(estimator: &'static str, ess: f64, floor: f64) -> Result<()> {
    if ess < floor {
        return Err(Error::InsufficientSamples {
            estimator,
            required: floor.ceil() as usize,
            available: ess,
        });
    }
    Ok(())
}

/// One-sample Kolmogorov-Smirnov test against `U(0, 1)`: `(D, p)`, with the
/// asymptotic Kolmogorov series and Stephens' small-sample correction.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_sf(lam))
}

/// `P(K > lam)` for the Kolmogorov distribution.
fn kolmogorov_sf(lam: f64) -> f64 {
    if lam < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lam * lam).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Axis-aligned box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: Vec2,
    pub hi: Vec2,
}

impl Window {
    pub fn new(lo: Vec2, hi: Vec2) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi.x > lo.x && hi.y > lo.y) {
            return Err(Error::InvalidParameter(format!("empty window {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[-a, a)^2`.
    pub fn centered(half_width: f64) -> Self {
        Self {
            lo: Vec2::new(-half_width, -half_width),
            hi: Vec2::new(half_width, half_width),
        }
    }

    /// The unit square centred at the origin.
    pub fn unit() -> Self {
        Self::centered(0.5)
    }

    pub fn width(&self) -> f64 {
        self.hi.x - self.lo.x
    }

    pub fn height(&self) -> f64 {
        self.hi.y - self.lo.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centre(&self) -> Vec2 {
        (self.lo + self.hi) * 0.5
    }

    #[inline]
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.lo.x && p.x < self.hi.x && p.y >= self.lo.y && p.y < self.hi.y
    }

    /// Scaled by `s` about its centre.
    pub fn scaled(&self, s: f64) -> Self {
        let c = self.centre();
        Self {
            lo: c + (self.lo - c) * s,
            hi: c + (self.hi - c) * s,
        }
    }

    pub fn translated(&self, d: Vec2) -> Self {
        Self {
            lo: self.lo + d,
            hi: self.hi + d,
        }
    }

    /// Cell `(ix, iy)` of an `nx x ny` partition.
    pub fn cell(&self, ix: usize, iy: usize, nx: usize, ny: usize) -> Self {
        let (w, h) = (self.width() / nx as f64, self.height() / ny as f64);
        let lo = self.lo + Vec2::new(ix as f64 * w, iy as f64 * h);
        Self {
            lo,
            hi: lo + Vec2::new(w, h),
        }
    }

    /// Index of the partition cell containing `p`.
    fn bin(&self, p: Vec2, nx: usize, ny: usize) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let ix = (((p.x - self.lo.x) / self.width() * nx as f64) as usize).min(nx - 1);
        let iy = (((p.y - self.lo.y) / self.height() * ny as f64) as usize).min(ny - 1);
        Some(iy * nx + ix)
    }
}

/// Particles near `origin`, rescaled by `sqrt(N)` and clipped to `window`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointProcessSample {
    pub points: Vec<Vec2>,
    pub window: Window,
    pub origin: Vec2,
    pub n_source: usize,
}

impl PointProcessSample {
    pub fn count_in(&self, w: &Window) -> usize {
        self.points.iter().filter(|p| w.contains(**p)).count()
    }
}

pub fn local_process(x: &[Vec2], origin: Vec2, window: Window) -> PointProcessSample {
    let s = (x.len() as f64).sqrt();
    PointProcessSample {
        points: x
            .iter()
            .map(|p| (*p - origin) * s)
            .filter(|q| window.contains(*q))
            .collect(),
        window,
        origin,
        n_source: x.len(),
    }
}

/// `n_frames` independent Poisson processes of intensity `lambda` on `window`.
pub fn poisson_fixture<R: Rng>(
    rng: &mut R,
    lambda: f64,
    window: Window,
    n_frames: usize,
) -> Result<Vec<PointProcessSample>> {
    let mean = lambda * window.area();
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::InvalidParameter(format!("Poisson mean {mean} must be positive")));
    }
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..n_frames)
        .map(|_| {
            let k = dist.sample(rng) as usize;
            let points = (0..k)
                .map(|_| {
                    let (u, v): (f64, f64) = (rng.random(), rng.random());
                    Vec2::new(window.lo.x + u * window.width(), window.lo.y + v * window.height())
                })
                .collect();
            PointProcessSample {
                points,
                window,
                origin: Vec2::ZERO,
                n_source: 0,
            }
        })
        .collect())
}

/// `(1/N) sum_i g(y - x_i) - h^{mu_theta}(y)`.
pub fn fluct_potential(x: &[Vec2], mu: &ThermalSolution, y: Vec2) -> Result<f64> {
    fluct_with_background(x, y, mu.potential_at(y))
}

fn fluct_with_background(x: &[Vec2], y: Vec2, h_mu: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty configuration".into()));
    }
    let mut s = 0.0;
    for (i, p) in x.iter().enumerate() {
        let r2 = (y - *p).norm2();
        if r2 == 0.0 {
            return Err(Error::Singularity(format!(
                "evaluation point coincides with particle {i}"
            )));
        }
        s += -0.5 * r2.ln();
    }
    Ok(s / x.len() as f64 - h_mu)
}

/// `h^{fluct * psi_{2 eta}}(y)`: every charge spread by `psi_{2 eta}`, the
/// background term through `h^{mu} - (g - g*psi_{2 eta}) * mu`.
pub fn smeared_fluct_potential(x: &[Vec2], mu: &ThermalSolution, y: Vec2, eta: SmearingRadius) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty configuration".into()));
    }
    let corr = SmoothingCorrection::new(Execution::default(), &mu.mu_theta, eta, 1.0)?;
    let s: f64 = x.iter().map(|p| psi_smeared_g(y - *p, eta)).sum();
    Ok(s / x.len() as f64 - (mu.potential_at(y) - corr.background_gap(y)))
}

/// Empirical upper tail `P(value >= T)` against a reference bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub thresholds: Vec<f64>,
    pub empirical: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub bound: Vec<f64>,
    /// Whether the bound is claimed at this threshold.
    pub asserted: Vec<bool>,
    pub samples: usize,
}

impl TailCurve {
    pub fn from_values<B, A>(values: &[f64], thresholds: &[f64], bound: B, assert: A) -> Result<Self>
    where
        B: Fn(f64) -> f64,
        A: Fn(f64) -> bool,
    {
        if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("thresholds must be strictly increasing".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut c = Self {
            thresholds: thresholds.to_vec(),
            empirical: Vec::new(),
            ci_lo: Vec::new(),
            ci_hi: Vec::new(),
            bound: Vec::new(),
            asserted: Vec::new(),
            samples: n,
        };
        for &t in thresholds {
            let k = n - sorted.partition_point(|&v| v < t);
            let (lo, hi) = wilson_interval(k, n, Z_99);
            c.empirical.push(k as f64 / n.max(1) as f64);
            c.ci_lo.push(lo);
            c.ci_hi.push(hi);
            c.bound.push(bound(t));
            c.asserted.push(assert(t));
        }
        Ok(c)
    }

    /// Thresholds where the lower CI exceeds an asserted bound.
    pub fn violations(&self) -> Vec<f64> {
        (0..self.thresholds.len())
            .filter(|&i| self.asserted[i] && self.ci_lo[i] > self.bound[i])
            .map(|i| self.thresholds[i])
            .collect()
    }

    pub fn passes(&self) -> bool {
        self.violations().is_empty()
    }

    /// Columns `threshold,empirical,ci_lo,ci_hi,bound`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,empirical,ci_lo,ci_hi,bound\n");
        for i in 0..self.thresholds.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.thresholds[i], self.empirical[i], self.ci_lo[i], self.ci_hi[i], self.bound[i]
            );
        }
        s
    }
}

/// `4k (exp(-T sqrt(N) / 2) + exp(-beta T N))`.
pub fn concentration_bound(k: usize, n: usize, beta: f64, t: f64) -> f64 {
    let nf = n as f64;
    4.0 * k as f64 * ((-0.5 * t * nf.sqrt()).exp() + (-beta * t * nf).exp())
}

/// Tail of `|sum_i h^fluct(y_i)|` in units of `k / sqrt(N)`, so the event
/// `{value >= T}` is the paper's `{|sum| >= k T N^(-1/2)}`. Asserted for
/// `T >= c_hat log N`.
pub fn concentration_tail<'a, I>(
    frames: I,
    mu: &ThermalSolution,
    beta: f64,
    y_points: &[Vec2],
    t_grid: &[f64],
    c_hat: f64,
) -> Result<TailCurve>
where
    I: IntoIterator<Item = &'a [Vec2]>,
{
    let k = y_points.len();
    if k == 0 {
        return Err(Error::InvalidParameter("no evaluation points".into()));
    }
    let h: Vec<f64> = y_points.iter().map(|y| mu.potential_at(*y)).collect();
    let mut values = Vec::new();
    let mut n = 0;
    for f in frames {
        n = f.len();
        let mut s = 0.0;
        for (y, hy) in y_points.iter().zip(&h) {
            s += fluct_with_background(f, *y, *hy)?;
        }
        values.push(s.abs() * (n as f64).sqrt() / k as f64);
    }
    let floor = c_hat * (n as f64).ln();
    TailCurve::from_values(&values, t_grid, |t| concentration_bound(k, n, beta, t), |t| t >= floor)
}

/// Regular bins over a box: positions for `k = 1`, displacements for `k = 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub region: Window,
    pub nx: usize,
    pub ny: usize,
}

impl Bins {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, i: usize) -> Window {
        self.region.cell(i % self.nx, i / self.nx, self.nx, self.ny)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub k: usize,
    pub bins: Bins,
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    pub frames_used: usize,
}

pub const MIN_CORRELATION_FRAMES: usize = 16;
/// Batch means used for standard errors when there is a single group; the
/// standardized estimate is then Student t with `BATCHES - 1` degrees of
/// freedom.
pub const BATCHES: usize = 8;

/// `int_a^b (w - |t|)_+ dt`.
fn overlap_1d(a: f64, b: f64, w: f64) -> f64 {
    // Antiderivative of (w - |t|)_+, odd in t.
    let f = |t: f64| {
        let s = t.abs().min(w);
        t.signum() * (w * s - 0.5 * s * s)
    };
    f(b) - f(a)
}

/// Raw sums over a set of frames; normalised per bin afterwards.
fn correlation_sums(samples: &[PointProcessSample], k: usize, bins: &Bins) -> Vec<f64> {
    let mut sums = vec![0.0; bins.len()];
    for s in samples {
        match k {
            1 => {
                for p in &s.points {
                    if let Some(b) = bins.region.bin(*p, bins.nx, bins.ny) {
                        sums[b] += 1.0;
                    }
                }
            }
            _ => {
                for (i, p) in s.points.iter().enumerate() {
                    for (j, q) in s.points.iter().enumerate() {
                        if i != j {
                            if let Some(b) = bins.region.bin(*q - *p, bins.nx, bins.ny) {
                                sums[b] += 1.0;
                            }
                        }
                    }
                }
            }
        }
    }
    sums
}

/// `R_k` estimated per bin. For `k = 1`, points per unit area per frame. For
/// `k = 2`, ordered pairs with displacement in the bin, divided by the
/// measure of `{(p, q) in W^2 : q - p in bin}`. A Poisson process of
/// intensity `lambda` gives `lambda^k` in expectation for both.
///
/// `groups` are independent runs (replicas). Standard errors come from the
/// spread across groups, or from batch means when there is a single group.
pub fn estimate_correlation(groups: &[Vec<PointProcessSample>], k: usize, bins: Bins) -> Result<CorrelationEstimate> {
    if !(k == 1 || k == 2) {
        return Err(Error::InvalidParameter(format!(
            "correlation order {k} is not supported"
        )));
    }
    if bins.is_empty() {
        return Err(Error::InvalidParameter("no bins".into()));
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total < MIN_CORRELATION_FRAMES || (groups.len() == 1 && total < BATCHES) {
        return Err(Error::InsufficientSamples {
            estimator: "correlation",
            required: MIN_CORRELATION_FRAMES,
            available: total as f64,
        });
    }
    let window = groups.iter().flatten().next().map(|s| s.window).unwrap_or(bins.region);
    let measure: Vec<f64> = (0..bins.len())
        .map(|b| {
            let c = bins.cell(b);
            if k == 1 {
                c.area()
            } else {
                overlap_1d(c.lo.x, c.hi.x, window.width()) * overlap_1d(c.lo.y, c.hi.y, window.height())
            }
        })
        .collect();
    let normalise = |sums: Vec<f64>, frames: usize| -> Vec<f64> {
        sums.iter()
            .zip(&measure)
            .map(|(s, m)| if *m > 0.0 { s / (frames as f64 * m) } else { 0.0 })
            .collect()
    };
    let parts: Vec<Vec<f64>> = if groups.len() >= 2 {
        groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| normalise(correlation_sums(g, k, &bins), g.len()))
            .collect()
    } else {
        let g = &groups[0];
        let per = g.len() / BATCHES;
        (0..BATCHES)
            .map(|b| {
                let chunk = &g[b * per..(b + 1) * per];
                normalise(correlation_sums(chunk, k, &bins), per)
            })
            .collect()
    };
    let all: Vec<PointProcessSample> = groups.iter().flatten().cloned().collect();
    let values = normalise(correlation_sums(&all, k, &bins), total);
    let g = parts.len() as f64;
    let std_err = (0..bins.len())
        .map(|b| {
            let col: Vec<f64> = parts.iter().map(|p| p[b]).collect();
            (variance(&col) / g).sqrt()
        })
        .collect();
    Ok(CorrelationEstimate {
        k,
        bins,
        values,
        std_err,
        frames_used: total,
    })
}

pub fn window_counts(samples: &[PointProcessSample], w: &Window) -> Vec<usize> {
    samples.iter().map(|s| s.count_in(w)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonTest {
    pub frames: usize,
    /// `lambda |Omega|`.
    pub expected_mean: f64,
    pub observed_mean: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub total_variation: f64,
}

/// Chi-square goodness of fit of window counts to `Poisson(mean)`, with
/// adjacent count bins pooled until each expects at least 5 frames, plus
/// the total-variation distance between the empirical and Poisson laws.
pub fn poisson_count_test(counts: &[usize], mean: f64) -> Result<PoissonTest> {
    let m = counts.len();
    if m < MIN_COUNT_FRAMES {
        return Err(Error::InsufficientSamples {
            estimator: "poisson_count_test",
            required: MIN_COUNT_FRAMES,
            available: m as f64,
        });
    }
    let pois = PoissonPmf::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let kmax = counts.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; kmax + 1];
    for &c in counts {
        hist[c] += 1;
    }
    let mf = m as f64;
    let pmf: Vec<f64> = (0..=kmax).map(|k| pois.pmf(k as u64)).collect();
    let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    let total_variation = 0.5
        * (hist
            .iter()
            .zip(&pmf)
            .map(|(h, p)| (*h as f64 / mf - p).abs())
            .sum::<f64>()
            + tail);

    // Count bins 0, 1, ...; the last pooled bin absorbs the whole upper tail.
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    let mut k = 0usize;
    loop {
        obs += hist.get(k).copied().unwrap_or(0) as f64;
        exp += pois.pmf(k as u64) * mf;
        if exp >= 5.0 {
            pooled.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
        k += 1;
        let rest = (1.0 - pois.cdf(k as u64 - 1).min(1.0)) * mf;
        if k > kmax && rest < 5.0 {
            let tail_obs = obs;
            let tail_exp = exp + rest;
            match pooled.last_mut() {
                Some(last) if tail_exp < 5.0 => {
                    last.0 += tail_obs;
                    last.1 += tail_exp;
                }
                _ => pooled.push((tail_obs, tail_exp)),
            }
            break;
        }
    }
    let chi_square: f64 = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = pooled.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sf(chi_square)
    };
    Ok(PoissonTest {
        frames: m,
        expected_mean: mean,
        observed_mean: counts.iter().sum::<usize>() as f64 / mf,
        chi_square,
        dof,
        p_value,
        total_variation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountCorrelation {
    pub r: f64,
    /// `1 / sqrt(M)`, the null standard deviation of `r`.
    pub sigma: f64,
}

impl CountCorrelation {
    pub fn within(&self, k_sigma: f64) -> bool {
        self.r.abs() <= k_sigma * self.sigma
    }
}

/// Pearson correlation of two count series.
pub fn count_correlation(a: &[usize], b: &[usize]) -> Result<CountCorrelation> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InvalidParameter(
            "count series must have equal length >= 3".into(),
        ));
    }
    let x: Vec<f64> = a.iter().map(|v| *v as f64).collect();
    let y: Vec<f64> = b.iter().map(|v| *v as f64).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let sxy: f64 = x.iter().zip(&y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let sxx: f64 = x.iter().map(|u| (u - mx) * (u - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let r = if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    };
    Ok(CountCorrelation {
        r,
        sigma: 1.0 / (a.len() as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub value: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `exp(-lambda int_W (1 - e^{-f}))`, the Poisson value.
    pub reference: f64,
}

impl LaplaceEstimate {
    pub fn agrees(&self, k_sigma: f64) -> bool {
        (self.value - self.reference).abs() <= k_sigma * self.std_err.max(1e-12)
    }
}

const LAPLACE_QUAD: usize = 256;

/// Empirical `E[exp(-sum_p f(p))]` for `f >= 0` supported in the window.
pub fn laplace_functional<F>(samples: &[PointProcessSample], f: F, lambda: f64) -> Result<LaplaceEstimate>
where
    F: Fn(Vec2) -> f64,
{
    let w = samples
        .first()
        .map(|s| s.window)
        .ok_or_else(|| Error::InvalidParameter("no samples".into()))?;
    let mut vals = Vec::with_capacity(samples.len());
    for s in samples {
        let mut e = 0.0;
        for p in &s.points {
            let fp = f(*p);
            if !(fp >= 0.0) {
                return Err(Error::InvalidParameter(format!("test function is {fp} at {p:?}")));
            }
            e += fp;
        }
        vals.push((-e).exp());
    }
    // Midpoint rule; f may be discontinuous.
    let cell = w.area() / (LAPLACE_QUAD * LAPLACE_QUAD) as f64;
    let mut integral = 0.0;
    for iy in 0..LAPLACE_QUAD {
        for ix in 0..LAPLACE_QUAD {
            let c = w.cell(ix, iy, LAPLACE_QUAD, LAPLACE_QUAD).centre();
            integral += 1.0 - (-f(c)).exp();
        }
    }
    let value = mean(&vals);
    let std_err = (variance(&vals) / vals.len() as f64).sqrt();
    Ok(LaplaceEstimate {
        value,
        std_err,
        ci_lo: value - Z_99 * std_err,
        ci_hi: value + Z_99 * std_err,
        reference: (-lambda * integral * cell).exp(),
    })
}

/// Log of an empirical mean of `exp(a_f)` with a CI, robust to overflow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub log_mean: f64,
    pub log_ci_lo: f64,
    pub log_ci_hi: f64,
    pub ess: f64,
}

pub fn exp_moment(exponents: &[f64]) -> ExpMoment {
    let amax = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if exponents.is_empty() || !amax.is_finite() {
        return ExpMoment {
            log_mean: amax,
            log_ci_lo: amax,
            log_ci_hi: amax,
            ess: exponents.len() as f64,
        };
    }
    let scaled: Vec<f64> = exponents.iter().map(|a| (a - amax).exp()).collect();
    let ess = effective_sample_size(&scaled);
    let m = mean(&scaled);
    let se = (variance(&scaled) / ess).sqrt();
    let lo = m - Z_99 * se;
    ExpMoment {
        log_mean: amax + m.ln(),
        log_ci_lo: if lo > 0.0 { amax + lo.ln() } else { f64::NEG_INFINITY },
        log_ci_hi: amax + (m + Z_99 * se).ln(),
        ess,
    }
}

fn integrate_against(mu: &GridMeasure, f: impl Fn(Vec2) -> f64) -> f64 {
    let grid = mu.grid;
    mu.density
        .iter()
        .enumerate()
        .filter(|(_, d)| **d != 0.0)
        .map(|(i, d)| d * f(grid.center_of(i)))
        .sum::<f64>()
        * grid.cell_area()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearStatisticReport {
    pub frames: usize,
    pub mean: f64,
    pub variance: f64,
    /// `|grad phi|_{L2} + |grad phi|_{Linf}` over the grid.
    pub phi_norm: f64,
    /// `log E exp(beta Fluct^2 / (C |phi|^2))`.
    pub log_moment: f64,
    /// `C beta |log beta| N`.
    pub bound: f64,
    pub passes: bool,
}

/// `Fluct[phi] = sum_i phi(x_i) - N int phi dmu_theta` per frame, with the
/// exponential-moment check at constant `c_hat`. Gradient norms are taken
/// over the computational grid by central differences.
pub fn linear_statistic<'a, I, F>(
    frames: I,
    mu: &ThermalSolution,
    beta: f64,
    phi: F,
    c_hat: f64,
) -> Result<LinearStatisticReport>
where
    I: IntoIterator<Item = &'a [Vec2]>,
    F: Fn(Vec2) -> f64,
{
    let m = &mu.mu_theta;
    let mean_phi = integrate_against(m, &phi);
    let mut values = Vec::new();
    let mut n = 0;
    for f in frames {
        n = f.len();
        values.push(f.iter().map(|p| phi(*p)).sum::<f64>() - n as f64 * mean_phi);
    }
    if values.is_empty() {
        return Err(Error::InvalidParameter("no frames".into()));
    }
    let grid = m.grid;
    let d = 0.5 * grid.cell;
    let (mut l2, mut linf): (f64, f64) = (0.0, 0.0);
    for i in 0..grid.len() {
        let c = grid.center_of(i);
        let gx = (phi(c + Vec2::new(d, 0.0)) - phi(c - Vec2::new(d, 0.0))) / (2.0 * d);
        let gy = (phi(c + Vec2::new(0.0, d)) - phi(c - Vec2::new(0.0, d))) / (2.0 * d);
        let g2 = gx * gx + gy * gy;
        l2 += g2;
        linf = linf.max(g2.sqrt());
    }
    let phi_norm = (l2 * grid.cell_area()).sqrt() + linf;
    let log_moment = if phi_norm == 0.0 {
        0.0
    } else {
        let a = beta / (c_hat * phi_norm * phi_norm);
        let ex: Vec<f64> = values.iter().map(|v| a * v * v).collect();
        exp_moment(&ex).log_mean
    };
    let bound = c_hat * beta * beta.ln().abs() * n as f64;
    Ok(LinearStatisticReport {
        frames: values.len(),
        mean: mean(&values),
        variance: variance(&values),
        phi_norm,
        log_moment,
        bound,
        passes: log_moment.abs() <= bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedMoment {
    pub k: f64,
    pub moment: ExpMoment,
    /// `exp(-C k)` and `exp(C k)`, on the log scale.
    pub log_lower: f64,
    pub log_upper: f64,
    /// `beta <= 1 / (sqrt(N) log N)`, where the two-sided bound is claimed.
    pub applicable: bool,
    pub passes: bool,
}

/// `E[exp(2 beta k N int h^{mu_theta} dfluct)]` per frame, checked against
/// `[e^{-C k}, e^{C k}]` with CI adjustment on both sides.
pub fn thermal_weight_moment<'a, I>(
    frames: I,
    mu: &ThermalSolution,
    beta: f64,
    k: f64,
    c_hat: f64,
) -> Result<TwoSidedMoment>
where
    I: IntoIterator<Item = &'a [Vec2]>,
{
    let grid = *mu.grid();
    let mean_h = integrate_against(&mu.mu_theta, |p| mu.potential_interpolated(p));
    let h_at = |p: Vec2| {
        if grid.contains(p) {
            mu.potential_interpolated(p)
        } else {
            mu.potential_at(p)
        }
    };
    let mut ex = Vec::new();
    let mut n = 0;
    for f in frames {
        n = f.len();
        let s: f64 = f.iter().map(|p| h_at(*p)).sum::<f64>() - n as f64 * mean_h;
        ex.push(2.0 * beta * k * s);
    }
    if ex.is_empty() {
        return Err(Error::InvalidParameter("no frames".into()));
    }
    let moment = exp_moment(&ex);
    let nf = n as f64;
    let (log_lower, log_upper) = (-c_hat * k, c_hat * k);
    Ok(TwoSidedMoment {
        k,
        moment,
        log_lower,
        log_upper,
        applicable: beta <= 1.0 / (nf.sqrt() * nf.ln()),
        passes: moment.log_ci_hi >= log_lower && moment.log_ci_lo <= log_upper,
    })
}

/// `mu(cell)` of a rectangle, exact for the piecewise-constant density.
fn rect_mass(mu: &GridMeasure, w: &Window) -> f64 {
    let g = mu.grid;
    let h = g.cell;
    let ix0 = ((w.lo.x - g.origin.x) / h).floor().max(0.0) as usize;
    let iy0 = ((w.lo.y - g.origin.y) / h).floor().max(0.0) as usize;
    let ix1 = (((w.hi.x - g.origin.x) / h).ceil().max(0.0) as usize).min(g.nx);
    let iy1 = (((w.hi.y - g.origin.y) / h).ceil().max(0.0) as usize).min(g.ny);
    let mut s = 0.0;
    for iy in iy0..iy1 {
        for ix in ix0..ix1 {
            let x0 = g.origin.x + ix as f64 * h;
            let y0 = g.origin.y + iy as f64 * h;
            let ox = (w.hi.x.min(x0 + h) - w.lo.x.max(x0)).max(0.0);
            let oy = (w.hi.y.min(y0 + h) - w.lo.y.max(y0)).max(0.0);
            s += mu.density[g.index(ix, iy)] * ox * oy;
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnePointRatio {
    pub bins: Bins,
    pub ratio: Vec<f64>,
    pub std_err: Vec<f64>,
    /// `c_hat beta N^{(1 + gamma) / 2}`.
    pub bias_allowance: f64,
    pub sup_deviation: f64,
    /// Bins where `|ratio - 1| > max(3 std_err, bias_allowance)`.
    pub failures: Vec<usize>,
}

impl OnePointRatio {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Histogram of all particles (the one-point marginal, by exchangeability)
/// over `bulk` bins in original coordinates, divided by `mu_theta(bin)`.
/// `groups` are independent runs; errors come from their spread, or from
/// Poisson counting when there is one group.
pub fn one_point_ratio<S: AsRef<[Vec2]>>(
    groups: &[Vec<S>],
    mu: &ThermalSolution,
    bulk: Bins,
    beta: f64,
    gamma: f64,
    c_hat: f64,
) -> Result<OnePointRatio> {
    let expected: Vec<f64> = (0..bulk.len())
        .map(|b| rect_mass(&mu.mu_theta, &bulk.cell(b)))
        .collect();
    if expected.iter().any(|e| *e <= 0.0) {
        return Err(Error::Precondition("a bulk bin has zero mu_theta mass".into()));
    }
    let mut n = 0;
    let hist = |frames: &[S], n: &mut usize| -> (Vec<f64>, usize) {
        let mut h = vec![0.0; bulk.len()];
        for f in frames {
            let f = f.as_ref();
            *n = f.len();
            for p in f {
                if let Some(b) = bulk.region.bin(*p, bulk.nx, bulk.ny) {
                    h[b] += 1.0;
                }
            }
        }
        (h, frames.len())
    };
    let per_group: Vec<(Vec<f64>, usize)> = groups.iter().map(|g| hist(g, &mut n)).collect();
    let frames: usize = per_group.iter().map(|(_, f)| f).sum();
    if frames == 0 {
        return Err(Error::InvalidParameter("no frames".into()));
    }
    let nf = n as f64;
    let to_ratio =
        |h: &[f64], fr: usize| -> Vec<f64> { h.iter().zip(&expected).map(|(c, e)| c / (fr as f64 * nf * e)).collect() };
    let mut total = vec![0.0; bulk.len()];
    for (h, _) in &per_group {
        total.iter_mut().zip(h).for_each(|(t, v)| *t += v);
    }
    let ratio = to_ratio(&total, frames);
    let std_err: Vec<f64> = if per_group.len() >= 2 {
        let parts: Vec<Vec<f64>> = per_group.iter().map(|(h, f)| to_ratio(h, *f)).collect();
        (0..bulk.len())
            .map(|b| {
                let col: Vec<f64> = parts.iter().map(|p| p[b]).collect();
                (variance(&col) / col.len() as f64).sqrt()
            })
            .collect()
    } else {
        total
            .iter()
            .zip(&ratio)
            .map(|(c, r)| if *c > 0.0 { r / c.sqrt() } else { f64::INFINITY })
            .collect()
    };
    let bias_allowance = c_hat * beta * nf.powf(0.5 * (1.0 + gamma));
    let sup_deviation = ratio.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let failures = (0..bulk.len())
        .filter(|&b| (ratio[b] - 1.0).abs() > (3.0 * std_err[b]).max(bias_allowance))
        .collect();
    Ok(OnePointRatio {
        bins: bulk,
        ratio,
        std_err,
        bias_allowance,
        sup_deviation,
        failures,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMoment {
    pub moment: ExpMoment,
    /// `C N eta^2 / (2 - t)`, the log of the bound.
    pub log_bound: f64,
    pub passes: bool,
}

/// `E[exp(t N (h^fluct(x) - h^{fluct * psi_eta}(x)))]` with the mollifier
/// `psi_eta` of support radius `eta`, i.e. circle smearing at radius
/// `eta / 2`.
pub fn smoothing_moment_check<'a, I>(
    frames: I,
    mu: &ThermalSolution,
    beta: f64,
    x: Vec2,
    t: f64,
    eta: f64,
    c_hat: f64,
) -> Result<SmoothingMoment>
where
    I: IntoIterator<Item = &'a [Vec2]>,
{
    if !(t > 0.0 && t < 2.0) {
        return Err(Error::Precondition(format!("t = {t} must lie in (0, 2)")));
    }
    let corr = SmoothingCorrection::new(
        Execution::default(),
        &mu.mu_theta,
        SmearingRadius::new(0.5 * eta)?,
        c_hat,
    )?;
    let mut ex = Vec::new();
    let mut n = 0;
    for f in frames {
        n = f.len();
        let nf = n as f64;
        if eta > 1.0 / (nf * beta).sqrt() {
            return Err(Error::Precondition(format!(
                "eta = {eta} exceeds N^(-1/2) beta^(-1/2) = {}",
                1.0 / (nf * beta).sqrt()
            )));
        }
        let config = ParticleConfiguration::new(f.to_vec())?;
        ex.push(t * nf * corr.smoothing_difference(&config, x)?);
    }
    if ex.is_empty() {
        return Err(Error::InvalidParameter("no frames".into()));
    }
    let moment = exp_moment(&ex);
    let log_bound = c_hat * n as f64 * eta * eta / (2.0 - t);
    Ok(SmoothingMoment {
        moment,
        log_bound,
        passes: moment.log_ci_lo <= log_bound,
    })
}

/// `per_side^2` bins covering the square of half-width `half_width` about
/// `centre`.
pub fn bulk_bins(centre: Vec2, half_width: f64, per_side: usize) -> Result<Bins> {
    Ok(Bins {
        region: Window::new(
            centre - Vec2::new(half_width, half_width),
            centre + Vec2::new(half_width, half_width),
        )?,
        nx: per_side,
        ny: per_side,
    })
}

/// Whether `p` lies in `{zeta_V <= tol}` with `margin` cells to spare.
pub fn in_bulk(zeta: &GridField, p: Vec2, tol: f64, margin: usize) -> bool {
    let g: &GridSpec = &zeta.grid;
    let Some((ix, iy)) = g.locate(p) else {
        return false;
    };
    let m = margin as i64;
    for dy in -m..=m {
        for dx in -m..=m {
            let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
            if jx < 0 || jy < 0 || jx >= g.nx as i64 || jy >= g.ny as i64 {
                return false;
            }
            if zeta.at(jx as usize, jy as usize) > tol {
                return false;
            }
        }
    }
    true
}
