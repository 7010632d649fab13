//! Energies of particle configurations and grid measures.
//!
//! Grid densities are piecewise constant on cells, and the real-space
//! energies here are exact for that piecewise constant density (see
//! [`crate::equilibrium::cell_pair_kernel`]). The Fourier-side energy in
//! [`fourier_energy`] computes the same quantity by an independent route.

use crate::equilibrium::{cell_kernel, cell_pair_kernel, potential_at, ThermalSolution};
use crate::error::{Error, Result};
use crate::fft::{Convolver, Fft2};
use crate::geometry::Vec2;
use crate::grid::{GridMeasure, GridSpec, SignedGridMeasure};
use crate::kernel::{g_from_r2, psi_gap, SmearingRadius};
use crate::parallel::{self, Execution};
use crate::potential::PotentialSpec;
use crate::quadrature;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Default constant in the regularization and smoothing bounds.
pub const C_HAT_DEFAULT: f64 = 10.0;

/// Positions `x_1, ..., x_N` of the particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfiguration {
    pub positions: Vec<Vec2>,
}

impl ParticleConfiguration {
    pub fn new(positions: Vec<Vec2>) -> Result<Self> {
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite position {p:?}")));
        }
        Ok(Self { positions })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn translated(&self, d: Vec2) -> Self {
        Self {
            positions: self.positions.iter().map(|p| *p + d).collect(),
        }
    }
}

/// Named pieces of an energy. Unused pieces are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub pair: f64,
    pub confinement: f64,
    pub cross: f64,
    pub background: f64,
    pub entropy: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.pair + self.confinement + self.cross + self.background + self.entropy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub value: f64,
    pub breakdown: EnergyBreakdown,
    /// Richardson-style estimate from a half-resolution recomputation, when
    /// the grid allows it.
    pub quadrature_error_estimate: Option<f64>,
}

impl EnergyReport {
    fn new(breakdown: EnergyBreakdown, quadrature_error_estimate: Option<f64>) -> Self {
        Self {
            value: breakdown.total(),
            breakdown,
            quadrature_error_estimate,
        }
    }
}

/// `sum_{i<j} g(x_i - x_j)`.
fn pair_sum(exec: Execution, xs: &[Vec2]) -> Result<f64> {
    parallel::try_map_sum(exec, 0..xs.len(), |i| {
        let xi = xs[i];
        let mut s = 0.0;
        for (j, xj) in xs.iter().enumerate().skip(i + 1) {
            let r2 = (xi - *xj).norm2();
            if r2 == 0.0 {
                return Err(Error::Singularity(format!("particles {i} and {j} coincide")));
            }
            s += g_from_r2(r2);
        }
        Ok(s)
    })
}

/// `H_N = 1/2 sum_{i != j} g(x_i - x_j) + N sum_i V(x_i)`.
pub fn hamiltonian(x: &ParticleConfiguration, v: &PotentialSpec) -> Result<f64> {
    hamiltonian_with(Execution::default(), x, v)
}

pub fn hamiltonian_with(exec: Execution, x: &ParticleConfiguration, v: &PotentialSpec) -> Result<f64> {
    let pair = pair_sum(exec, &x.positions)?;
    let n = x.n() as f64;
    let conf: f64 = x.positions.iter().map(|p| v.evaluate(*p)).sum();
    Ok(pair + n * conf)
}

/// Exact interaction energy `1/2 int int g rho rho` of cell densities on a
/// fixed grid, through [`cell_pair_kernel`].
pub struct EnergyOperator {
    grid: GridSpec,
    conv: Convolver,
    exec: Execution,
}

impl EnergyOperator {
    pub fn new(grid: GridSpec, exec: Execution) -> Self {
        let h = grid.cell;
        let conv = Convolver::new(
            grid.nx,
            grid.ny,
            move |dx, dy| cell_pair_kernel(Vec2::new(dx as f64 * h, dy as f64 * h), h),
            exec,
        );
        Self { grid, conv, exec }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn energy(&self, density: &[f64]) -> f64 {
        let k = self.conv.apply(density);
        let area = self.grid.cell_area();
        0.5 * parallel::map_sum(self.exec, 0..density.len(), |i| density[i] * k[i]) * area
    }
}

/// Real-space `E(nu)` of a signed measure.
pub fn signed_energy(nu: &SignedGridMeasure) -> f64 {
    EnergyOperator::new(nu.grid, Execution::default()).energy(&nu.density)
}

/// `E(mu) + int V dmu`, plus `(1/theta) int mu log mu` when `theta` is given.
///
/// `int V dmu` uses `V` at cell centres, the same sampling the equilibrium
/// solvers use.
pub fn mean_field_energy(mu: &GridMeasure, v: &PotentialSpec, theta: Option<f64>) -> Result<EnergyReport> {
    let op = EnergyOperator::new(mu.grid, Execution::default());
    mean_field_energy_with(&op, mu, v, theta)
}

pub fn mean_field_energy_with(
    op: &EnergyOperator,
    mu: &GridMeasure,
    v: &PotentialSpec,
    theta: Option<f64>,
) -> Result<EnergyReport> {
    if *op.grid() != mu.grid {
        return Err(Error::InvalidParameter("measure and operator grids differ".into()));
    }
    if let Some(t) = theta {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {t}")));
        }
    }
    let fine = mean_field_parts(op, &mu.density, v, theta);
    let estimate = coarsened(mu).map(|coarse| {
        let cop = EnergyOperator::new(coarse.grid, op.execution());
        (fine.total() - mean_field_parts(&cop, &coarse.density, v, theta).total()).abs() / 3.0
    });
    Ok(EnergyReport::new(fine, estimate))
}

fn mean_field_parts(op: &EnergyOperator, density: &[f64], v: &PotentialSpec, theta: Option<f64>) -> EnergyBreakdown {
    let grid = *op.grid();
    let area = grid.cell_area();
    let confinement = parallel::map_sum(op.execution(), 0..density.len(), |i| {
        density[i] * v.evaluate(grid.center_of(i))
    }) * area;
    let entropy = theta.map_or(0.0, |t| {
        density.iter().filter(|d| **d > 0.0).map(|d| d * d.ln()).sum::<f64>() * area / t
    });
    EnergyBreakdown {
        pair: op.energy(density),
        confinement,
        entropy,
        ..Default::default()
    }
}

/// 2x2 block average, when both sides are even and not tiny.
fn coarsened(mu: &GridMeasure) -> Option<GridMeasure> {
    let g = mu.grid;
    if !g.nx.is_multiple_of(2) || !g.ny.is_multiple_of(2) || g.nx < 8 || g.ny < 8 {
        return None;
    }
    let cg = GridSpec::new(g.origin, 2.0 * g.cell, g.nx / 2, g.ny / 2).ok()?;
    let density = (0..cg.len())
        .map(|k| {
            let (cx, cy) = cg.coords(k);
            let (fx, fy) = (2 * cx, 2 * cy);
            0.25 * (mu.density[g.index(fx, fy)]
                + mu.density[g.index(fx + 1, fy)]
                + mu.density[g.index(fx, fy + 1)]
                + mu.density[g.index(fx + 1, fy + 1)])
        })
        .collect();
    GridMeasure::new(cg, density).ok()
}

fn check_unit_mass(mu: &GridMeasure) -> Result<()> {
    if (mu.mass - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "background measure must be a probability measure, mass is {}",
            mu.mass
        )));
    }
    Ok(())
}

/// A neutralizing background `mu` with its self-energy computed once, for
/// evaluating `F_N` on many configurations.
pub struct Jellium<'a> {
    mu: &'a GridMeasure,
    energy: f64,
    exec: Execution,
}

impl<'a> Jellium<'a> {
    pub fn new(exec: Execution, mu: &'a GridMeasure) -> Result<Self> {
        check_unit_mass(mu)?;
        Ok(Self {
            mu,
            energy: EnergyOperator::new(mu.grid, exec).energy(&mu.density),
            exec,
        })
    }

    /// Reuse an already computed `E(mu)`.
    pub fn with_energy(exec: Execution, mu: &'a GridMeasure, energy: f64) -> Result<Self> {
        check_unit_mass(mu)?;
        Ok(Self { mu, energy, exec })
    }

    pub fn background_energy(&self) -> f64 {
        self.energy
    }

    /// `h^mu(y)`, exact for the cell density.
    pub fn potential(&self, y: Vec2) -> f64 {
        potential_at(self.exec, &self.mu.grid, &self.mu.density, y)
    }

    /// `F_N` split as `pair` (point-point), `cross` (point-background) and
    /// `background` (`E(mu)`).
    pub fn next_order(&self, x: &ParticleConfiguration) -> Result<EnergyReport> {
        let n = x.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        let nf = n as f64;
        let pair = pair_sum(self.exec, &x.positions)? / (nf * nf);
        let cross = -x.positions.iter().map(|p| self.potential(*p)).sum::<f64>() / nf;
        Ok(EnergyReport::new(
            EnergyBreakdown {
                pair,
                cross,
                background: self.energy,
                ..Default::default()
            },
            None,
        ))
    }
}

/// `F_N(X, mu) = (1/2N^2) sum_{i != j} g(x_i - x_j) - (1/N) sum_i h^mu(x_i) + E(mu)`.
pub fn next_order_energy(x: &ParticleConfiguration, mu: &GridMeasure) -> Result<f64> {
    Ok(Jellium::new(Execution::default(), mu)?.next_order(x)?.value)
}

/// The three terms on the right of the splitting formula, next to `H_N`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplittingTerms {
    pub hamiltonian: f64,
    /// `N^2 E_theta(mu_theta)`.
    pub mean_field: f64,
    /// `-(N / theta) sum_i log mu_theta(x_i)`.
    pub log_density: f64,
    /// `N^2 F_N(X, mu_theta)`.
    pub next_order: f64,
}

impl SplittingTerms {
    pub fn residual(&self) -> f64 {
        self.hamiltonian - (self.mean_field + self.log_density + self.next_order)
    }

    pub fn relative(&self) -> f64 {
        self.residual().abs() / self.hamiltonian.abs()
    }
}

/// Evaluate both sides of the splitting formula for `X` against `mu_theta`.
///
/// `log mu_theta(x_i)` is the bilinear interpolant of the cell values of
/// `log mu_theta`. Since the discrete Euler-Lagrange equation holds at cell
/// centres, the mismatch is then the interpolation error of the smooth
/// `h^mu + V`, which is second order in the cell size for every
/// configuration.
pub fn splitting_terms(
    exec: Execution,
    x: &ParticleConfiguration,
    v: &PotentialSpec,
    sol: &ThermalSolution,
) -> Result<SplittingTerms> {
    let grid = *sol.grid();
    let mut log_sum = 0.0;
    for (i, p) in x.positions.iter().enumerate() {
        if !grid.contains(*p) {
            return Err(Error::Domain(format!("particle {i} at {p:?} lies outside the grid")));
        }
        for (idx, w) in grid.bilinear_stencil(*p) {
            if w == 0.0 {
                continue;
            }
            let m = sol.mu_theta.density[idx];
            if !(m > 0.0) {
                return Err(Error::Domain(format!("mu_theta vanishes next to particle {i} ({p:?})")));
            }
            log_sum += w * m.ln();
        }
    }
    let n = x.n() as f64;
    let mu = &sol.mu_theta;
    let area = grid.cell_area();
    let e_mu = 0.5 * parallel::map_sum(exec, 0..mu.density.len(), |i| mu.density[i] * sol.potential.values[i]) * area;
    let jellium = Jellium::with_energy(exec, mu, e_mu)?;
    let parts = mean_field_parts_from_potential(e_mu, mu, v, sol.theta);
    Ok(SplittingTerms {
        hamiltonian: hamiltonian_with(exec, x, v)?,
        mean_field: n * n * parts,
        log_density: -(n / sol.theta) * log_sum,
        next_order: n * n * jellium.next_order(x)?.value,
    })
}

fn mean_field_parts_from_potential(e_mu: f64, mu: &GridMeasure, v: &PotentialSpec, theta: f64) -> f64 {
    let grid = mu.grid;
    let area = grid.cell_area();
    let mut conf = 0.0;
    let mut ent = 0.0;
    for (i, d) in mu.density.iter().enumerate() {
        if *d > 0.0 {
            conf += d * v.evaluate(grid.center_of(i));
            ent += d * d.ln();
        }
    }
    e_mu + conf * area + ent * area / theta
}

/// `H_N - [N^2 E_theta(mu_theta) - (N/theta) sum log mu_theta(x_i) + N^2 F_N]`.
pub fn splitting_residual(
    x: &ParticleConfiguration,
    v: &PotentialSpec,
    theta: f64,
    sol: &ThermalSolution,
) -> Result<f64> {
    if (theta - sol.theta).abs() > 1e-12 * theta.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta {theta} does not match the thermal solution ({})",
            sol.theta
        )));
    }
    Ok(splitting_terms(Execution::default(), x, v, sol)?.residual())
}

/// Arc-length share of the circle `|y - center| = eta` falling in each grid
/// cell, as `(cell index, fraction)`; fractions sum to one.
pub fn circle_deposit(grid: &GridSpec, center: Vec2, eta: f64) -> Result<Vec<(usize, f64)>> {
    let h = grid.cell;
    let mut angles = vec![0.0, 2.0 * PI];
    let lines = |c: f64, o: f64| {
        let lo = ((c - eta - o) / h).floor() as i64;
        let hi = ((c + eta - o) / h).ceil() as i64;
        (lo..=hi).map(move |k| (o + k as f64 * h - c) / eta)
    };
    for s in lines(center.x, grid.origin.x) {
        if s.abs() < 1.0 {
            let a = s.acos();
            angles.extend([a, 2.0 * PI - a]);
        }
    }
    for s in lines(center.y, grid.origin.y) {
        if s.abs() < 1.0 {
            let a = s.asin();
            angles.extend([a.rem_euclid(2.0 * PI), (PI - a).rem_euclid(2.0 * PI)]);
        }
    }
    angles.sort_by(f64::total_cmp);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in angles.windows(2) {
        let span = w[1] - w[0];
        if span <= 0.0 {
            continue;
        }
        let p = center + Vec2::polar(eta, 0.5 * (w[0] + w[1]));
        let (ix, iy) = grid
            .locate(p)
            .ok_or_else(|| Error::Domain(format!("circle of radius {eta} at {center:?} leaves the grid")))?;
        let idx = grid.index(ix, iy);
        let frac = span / (2.0 * PI);
        match out.iter_mut().find(|(i, _)| *i == idx) {
            Some(e) => e.1 += frac,
            None => out.push((idx, frac)),
        }
    }
    Ok(out)
}

/// Builds `(emp_N - mu) * phi_eta` on the grid of `mu`.
///
/// Each point's circle is deposited by exact arc length. The background
/// `mu * phi_eta` deposits the circle around every cell centre the same way,
/// so a configuration sitting on cell centres with weights `mu` cancels it.
pub struct Smearer {
    grid: GridSpec,
    eta: f64,
    background: Vec<f64>,
}

impl Smearer {
    pub fn new(exec: Execution, mu: &GridMeasure, eta: SmearingRadius) -> Result<Self> {
        let grid = mu.grid;
        let e = eta.get();
        if e < 2.0 * grid.cell {
            return Err(Error::InvalidParameter(format!(
                "eta = {e} is under-resolved by cells of size {}; need eta >= 2 cells",
                grid.cell
            )));
        }
        let m = (e / grid.cell).ceil() as usize + 1;
        let side = 2 * m + 1;
        let stencil_grid = GridSpec::new(
            Vec2::new(-(m as f64 + 0.5) * grid.cell, -(m as f64 + 0.5) * grid.cell),
            grid.cell,
            side,
            side,
        )?;
        let mut table = vec![0.0; side * side];
        for (idx, frac) in circle_deposit(&stencil_grid, Vec2::ZERO, e)? {
            table[idx] = frac;
        }
        let mi = m as i64;
        let conv = Convolver::new(
            grid.nx,
            grid.ny,
            move |dx, dy| {
                if dx.abs() > mi || dy.abs() > mi {
                    0.0
                } else {
                    table[((dy + mi) as usize) * side + (dx + mi) as usize]
                }
            },
            exec,
        );
        Ok(Self {
            grid,
            eta: e,
            background: conv.apply(&mu.density),
        })
    }

    pub fn fluctuation(&self, x: &ParticleConfiguration) -> Result<SignedGridMeasure> {
        let n = x.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        let mut density: Vec<f64> = self.background.iter().map(|b| -b).collect();
        let w = 1.0 / (n as f64 * self.grid.cell_area());
        for p in &x.positions {
            for (idx, frac) in circle_deposit(&self.grid, *p, self.eta)? {
                density[idx] += w * frac;
            }
        }
        SignedGridMeasure::new(self.grid, density)
    }
}

/// `(emp_N - mu) * phi_eta` as a signed grid density.
pub fn smear_fluctuation(
    x: &ParticleConfiguration,
    mu: &GridMeasure,
    eta: SmearingRadius,
) -> Result<SignedGridMeasure> {
    Smearer::new(Execution::default(), mu, eta)?.fluctuation(x)
}

/// Aliases `xi + m / h` summed for `|m_x|, |m_y| <= ALIASES`.
const ALIASES: i64 = 2;

/// `sum' 1 / (m + i n)^4` over the Gaussian integers.
const SQUARE_LATTICE_G4: f64 = 3.151_212_002_153_897_5;

/// `E(nu) = 1/2 int g_hat |nu_hat|^2` for a zero-mass cell density.
///
/// The density is zero-padded to a square periodic box of side `L` (twice the
/// longer grid side), and the lattice sum `1/2 sum_{k != 0} g_hat |nu_hat|^2
/// / L^2` is taken with the exact transform of the piecewise constant density
/// (`sinc` factors, aliases up to [`ALIASES`]). That sum is the energy of the
/// periodized measure; the periodic Green function is
/// `g(z) + pi |z|^2 / (2 L^2) + G_4 Re(z^4) / 4 + const` up to eighth order, so
/// the two image corrections are removed exactly through the first three
/// complex moments of `nu`.
pub fn fourier_energy(nu: &SignedGridMeasure) -> Result<f64> {
    fourier_energy_with(Execution::default(), nu)
}

pub fn fourier_energy_with(exec: Execution, nu: &SignedGridMeasure) -> Result<f64> {
    let grid = nu.grid;
    let tv = nu.total_variation();
    if nu.total_mass.abs() > 1e-10 * tv.max(1.0) {
        return Err(Error::Precondition(format!(
            "Fourier energy needs a zero-mass measure, mass is {:.3e}",
            nu.total_mass
        )));
    }
    if tv == 0.0 {
        return Ok(0.0);
    }
    let h = grid.cell;
    let area = grid.cell_area();
    let p = 2 * grid.nx.max(grid.ny);
    let len = p as f64 * h;
    let fft = Fft2::new(p, p, exec);
    let charges: Vec<f64> = nu.density.iter().map(|d| d * area).collect();
    let spec = fft.forward_real(&charges, grid.nx, grid.ny);
    let signed = |k: usize| if k <= p / 2 { k as i64 } else { k as i64 - p as i64 };
    let sinc = |t: f64| if t == 0.0 { 1.0 } else { t.sin() / t };
    let dxi = 1.0 / len;
    let sum = parallel::map_sum(exec, 0..p * p, |idx| {
        let (kx, ky) = (idx / p, idx % p);
        if kx == 0 && ky == 0 {
            return 0.0;
        }
        let (sx, sy) = (signed(kx) as f64, signed(ky) as f64);
        let mut weight = 0.0;
        for mx in -ALIASES..=ALIASES {
            for my in -ALIASES..=ALIASES {
                let xi = Vec2::new(sx * dxi + mx as f64 / h, sy * dxi + my as f64 / h);
                let s = sinc(PI * h * xi.x) * sinc(PI * h * xi.y);
                weight += s * s / (2.0 * PI * xi.norm2());
            }
        }
        weight * spec[idx].norm_sqr()
    });
    let periodic = 0.5 * sum * dxi * dxi;

    // Complex moments about the grid centre.
    let c = (grid.origin + grid.extent()) * 0.5;
    let mut m = [Complex64::new(0.0, 0.0); 4];
    for (i, q) in charges.iter().enumerate() {
        if *q == 0.0 {
            continue;
        }
        let d = grid.center_of(i) - c;
        let z = Complex64::new(d.x, d.y);
        m[1] += q * z;
        m[2] += q * z * z;
        m[3] += q * z * z * z;
    }
    let l2 = len * len;
    let quad = PI * m[1].norm_sqr() / (2.0 * l2);
    let quartic = SQUARE_LATTICE_G4 / (8.0 * l2 * l2) * (6.0 * m[2] * m[2] - 8.0 * m[1] * m[3]).re;
    Ok(periodic + quad - quartic)
}

/// Radial Gauss rule for `int_0^{2 eta} f(r) r dr` with `psi_gap` tabulated,
/// and an angular trapezoid rule.
struct GapQuadrature {
    /// `(r, weight * r * psi_gap(r))`.
    radial: Vec<(f64, f64)>,
    angles: Vec<Vec2>,
    eta: SmearingRadius,
}

const GAP_ANGLES: usize = 32;

impl GapQuadrature {
    fn new(eta: SmearingRadius) -> Self {
        let e = eta.get();
        let (x, w) = quadrature::gl32();
        let mut radial = Vec::with_capacity(2 * x.len());
        // The profile has a log singularity at 0 and a kink at eta.
        for (a, b) in [(0.0, e), (e, 2.0 * e)] {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (xi, wi) in x.iter().zip(w) {
                let r = mid + half * xi;
                let gap = psi_gap(r, eta).unwrap_or(0.0);
                radial.push((r, wi * half * r * gap));
            }
        }
        let angles = (0..GAP_ANGLES)
            .map(|k| Vec2::polar(1.0, 2.0 * PI * k as f64 / GAP_ANGLES as f64))
            .collect();
        Self { radial, angles, eta }
    }

    /// `int psi_gap(|x - y|) f(y) dy`.
    fn convolve<F: Fn(Vec2) -> f64>(&self, x: Vec2, f: F) -> f64 {
        let dt = 2.0 * PI / self.angles.len() as f64;
        self.radial
            .iter()
            .map(|&(r, w)| w * dt * self.angles.iter().map(|u| f(x + *u * r)).sum::<f64>())
            .sum()
    }
}

/// Gap and bound of the regularization inequality for one configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegularizationGap {
    pub gap: f64,
    pub bound: f64,
    /// `-log(eta) / (2N)`: the smeared self-energies.
    pub diagonal: f64,
    /// `-(1/2N^2) sum_{i != j} (g - g*psi_{2eta})(x_i - x_j)`, never positive.
    pub pair: f64,
    /// `(1/N) sum_i G(x_i)` with `G = (g - g*psi_{2eta}) * mu`.
    pub cross: f64,
    /// `-1/2 int G dmu`.
    pub background: f64,
}

impl RegularizationGap {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

/// Smoothing corrections `(g - g*psi_{2eta}) * mu` for a fixed background.
///
/// Expanding `E((emp_N - mu) * phi_eta) - F_N(X, mu)` with
/// `g * phi_eta * phi_eta = g * psi_{2eta}` gives exactly
///
/// `-log(eta)/(2N) - (1/2N^2) sum_{i != j} gap(x_i - x_j) + (1/N) sum_i G(x_i) - 1/2 int G dmu`
///
/// where `gap = g - g*psi_{2eta} >= 0` is supported in `|x| <= 2 eta` and
/// `G = gap * mu`. Every term is evaluated directly, so no grid has to resolve
/// `eta`. `mu` enters `G` through its bilinear interpolant.
pub struct SmoothingCorrection<'a> {
    mu: &'a GridMeasure,
    quad: GapQuadrature,
    background_integral: OnceLock<f64>,
    exec: Execution,
    c_hat: f64,
}

impl<'a> SmoothingCorrection<'a> {
    pub fn new(exec: Execution, mu: &'a GridMeasure, eta: SmearingRadius, c_hat: f64) -> Result<Self> {
        check_unit_mass(mu)?;
        if !(c_hat.is_finite() && c_hat > 0.0) {
            return Err(Error::InvalidParameter(format!("C_hat must be positive, got {c_hat}")));
        }
        Ok(Self {
            mu,
            quad: GapQuadrature::new(eta),
            background_integral: OnceLock::new(),
            exec,
            c_hat,
        })
    }

    pub fn eta(&self) -> f64 {
        self.quad.eta.get()
    }

    /// `G(y) = int (g - g*psi_{2eta})(y - z) mu(dz)`.
    pub fn background_gap(&self, y: Vec2) -> f64 {
        self.quad.convolve(y, |z| self.mu.density_at(z))
    }

    /// `int G dmu`, computed on first use.
    pub fn background_integral(&self) -> f64 {
        *self.background_integral.get_or_init(|| {
            let (mu, grid) = (self.mu, self.mu.grid);
            parallel::map_sum(self.exec, 0..grid.len(), |i| {
                let d = mu.density[i];
                if d == 0.0 {
                    0.0
                } else {
                    d * self.quad.convolve(grid.center_of(i), |y| mu.density_at(y))
                }
            }) * grid.cell_area()
        })
    }

    fn sup_factor(&self) -> f64 {
        let s = self.mu.sup();
        s + s * s
    }

    pub fn regularization_gap(&self, x: &ParticleConfiguration) -> Result<RegularizationGap> {
        let n = x.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        let nf = n as f64;
        let eta = self.quad.eta;
        let e = eta.get();
        let mut close = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = (x.positions[i] - x.positions[j]).norm();
                if r == 0.0 {
                    return Err(Error::Singularity(format!("particles {i} and {j} coincide")));
                }
                if r < 2.0 * e {
                    close += psi_gap(r, eta).unwrap_or(0.0);
                }
            }
        }
        let diagonal = -e.ln() / (2.0 * nf);
        let pair = -close / (nf * nf);
        let cross = x.positions.iter().map(|p| self.background_gap(*p)).sum::<f64>() / nf;
        let background = -0.5 * self.background_integral();
        Ok(RegularizationGap {
            gap: diagonal + pair + cross + background,
            bound: diagonal + self.c_hat * self.sup_factor() * e * e,
            diagonal,
            pair,
            cross,
            background,
        })
    }

    /// `h^fluct(y) - h^{fluct * psi_{2eta}}(y)
    ///  = (1/N) sum_i gap(y - x_i) - G(y)`.
    pub fn smoothing_difference(&self, x: &ParticleConfiguration, y: Vec2) -> Result<f64> {
        let n = x.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        let eta = self.quad.eta;
        let mut s = 0.0;
        for (i, p) in x.positions.iter().enumerate() {
            let r = (y - *p).norm();
            if r == 0.0 {
                return Err(Error::Singularity(format!(
                    "evaluation point coincides with particle {i}"
                )));
            }
            s += psi_gap(r, eta).unwrap_or(0.0);
        }
        Ok(s / n as f64 - self.background_gap(y))
    }

    /// `-C_hat ||mu||_inf eta^2`, the floor for [`Self::smoothing_difference`].
    pub fn smoothing_floor(&self) -> f64 {
        let e = self.eta();
        -self.c_hat * self.mu.sup() * e * e
    }
}

/// `(gap, bound)` of the regularization inequality with `C_hat = 10`.
pub fn regularization_gap(x: &ParticleConfiguration, mu: &GridMeasure, eta: SmearingRadius) -> Result<(f64, f64)> {
    let r = SmoothingCorrection::new(Execution::default(), mu, eta, C_HAT_DEFAULT)?.regularization_gap(x)?;
    Ok((r.gap, r.bound))
}

/// The same gap computed literally on the grid, as
/// `fourier_energy(smear_fluctuation(X, mu, eta)) - next_order_energy(X, mu)`.
///
/// Circles are deposited on cells, so this carries a discretization error
/// that shrinks as `eta / cell` grows; it serves as an independent check of
/// [`regularization_gap`] at resolvable `eta`.
pub fn regularization_gap_on_grid(x: &ParticleConfiguration, mu: &GridMeasure, eta: SmearingRadius) -> Result<f64> {
    let nu = smear_fluctuation(x, mu, eta)?;
    Ok(fourier_energy(&nu)? - next_order_energy(x, mu)?)
}

/// `h^fluct(y) - h^{fluct * psi_{2eta}}(y)` for `fluct = emp_N - mu`.
pub fn smoothing_lower_bound_check(
    x: &ParticleConfiguration,
    mu: &GridMeasure,
    y: Vec2,
    eta: SmearingRadius,
) -> Result<f64> {
    SmoothingCorrection::new(Execution::default(), mu, eta, C_HAT_DEFAULT)?.smoothing_difference(x, y)
}

/// `int_cell -log max(|z|, eta) dz` for the square of side `h` centred at `c`.
fn smeared_cell_integral(c: Vec2, h: f64, eta: f64) -> f64 {
    let half = 0.5 * h * std::f64::consts::SQRT_2;
    if c.norm() - half >= eta {
        return cell_kernel(c, h);
    }
    // The kink at |z| = eta limits any rule; 8x8 sub-squares of 32-point
    // Gauss rules keep the error far below the grid error.
    let (x, w) = quadrature::gl32();
    let sub = 8;
    let s = h / sub as f64;
    let mut total = 0.0;
    for a in 0..sub {
        for b in 0..sub {
            let lo = Vec2::new(c.x - 0.5 * h + a as f64 * s, c.y - 0.5 * h + b as f64 * s);
            for (xi, wi) in x.iter().zip(w) {
                for (yi, wj) in x.iter().zip(w) {
                    let z = lo + Vec2::new(0.5 * s * (xi + 1.0), 0.5 * s * (yi + 1.0));
                    total += wi * wj * -(z.norm().max(eta)).ln();
                }
            }
        }
    }
    total * 0.25 * s * s
}

/// `h^{nu * phi_eta}(y)` for a cell density.
pub fn smeared_potential_at(nu: &SignedGridMeasure, y: Vec2, eta: SmearingRadius) -> f64 {
    let grid = nu.grid;
    let e = eta.get();
    parallel::map_sum(Execution::default(), 0..grid.len(), |i| {
        let d = nu.density[i];
        if d == 0.0 {
            0.0
        } else {
            d * smeared_cell_integral(grid.center_of(i) - y, grid.cell, e)
        }
    })
}

/// Quantities entering the energy lower bound for one test measure.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MinEnergyCheck {
    /// `|h^{nu * phi_eta}(0)|`.
    pub epsilon: f64,
    /// `E(nu)` from [`fourier_energy`].
    pub energy: f64,
    /// `E (1 + log 1/epsilon + log 1/delta + log 1/eta) / epsilon^2`.
    pub rhs_ratio: f64,
}

pub fn min_energy_check(nu: &SignedGridMeasure, eta: SmearingRadius, delta: f64) -> Result<MinEnergyCheck> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let moment = nu.first_moment();
    if moment > 1.0 / delta * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "first moment {moment} exceeds 1/delta = {}",
            1.0 / delta
        )));
    }
    let epsilon = smeared_potential_at(nu, Vec2::ZERO, eta).abs();
    if !(epsilon > 0.0) {
        return Err(Error::Precondition("h^{nu * phi_eta}(0) vanishes".into()));
    }
    let energy = fourier_energy(nu)?;
    let logs = 1.0 - epsilon.ln() - delta.ln() - eta.get().ln();
    if !(logs > 0.0) {
        return Err(Error::Precondition(format!(
            "logarithmic factor {logs} is not positive for these parameters"
        )));
    }
    Ok(MinEnergyCheck {
        epsilon,
        energy,
        rhs_ratio: energy * logs / (epsilon * epsilon),
    })
}

/// `(1 - r^2 / w^2)^4` inside `r < w`.
pub fn bump(p: Vec2, center: Vec2, width: f64) -> f64 {
    let t = (p - center).norm2() / (width * width);
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - t).powi(4)
    }
}

/// Sum of bumps with the given charges, each normalized on the grid so the
/// total mass equals the sum of charges to rounding.
pub fn bump_multipole(grid: GridSpec, charges: &[(Vec2, f64)], width: f64) -> Result<SignedGridMeasure> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bump width must be positive, got {width}"
        )));
    }
    let area = grid.cell_area();
    let mut density = vec![0.0; grid.len()];
    for &(c, q) in charges {
        let vals: Vec<f64> = (0..grid.len()).map(|i| bump(grid.center_of(i), c, width)).collect();
        let mass: f64 = vals.iter().sum::<f64>() * area;
        if mass == 0.0 {
            return Err(Error::InvalidParameter(format!("bump at {c:?} misses the grid")));
        }
        for (d, v) in density.iter_mut().zip(&vals) {
            *d += q * v / mass;
        }
    }
    SignedGridMeasure::new(grid, density)
}

/// `bump(x - a) - bump(x + a)`.
pub fn smooth_dipole(grid: GridSpec, a: Vec2, width: f64) -> Result<SignedGridMeasure> {
    bump_multipole(grid, &[(a, 1.0), (-a, -1.0)], width)
}

/// One member of the fixed test family for [`min_energy_check`].
#[derive(Clone, Debug)]
pub struct MinEnergyCase {
    pub label: String,
    pub nu: SignedGridMeasure,
    pub eta: SmearingRadius,
    pub delta: f64,
}

/// Smearing radius used by [`min_energy_family`].
pub const MIN_ENERGY_ETA: f64 = 0.05;

/// Ten dipoles and ten quadrupoles of varying size, placement and
/// orientation, none symmetric about the origin. Each uses the tightest
/// admissible `delta`, `1 / int |x| |nu|`.
pub fn min_energy_family() -> Result<Vec<MinEnergyCase>> {
    let grid = GridSpec::centered(2.0, 256)?;
    let eta = SmearingRadius::new(MIN_ENERGY_ETA)?;
    let mut out = Vec::with_capacity(20);
    for k in 0..10 {
        let s = 0.15 * 1.2f64.powi(k);
        let angle = 0.37 * k as f64;
        let offset = Vec2::polar(0.1 + 0.03 * k as f64, 1.3 * k as f64);
        let a = Vec2::polar(0.5 * s + 0.1, angle);
        let nu = bump_multipole(grid, &[(offset + a, 1.0), (offset - a, -1.0)], s)?;
        out.push(case(format!("dipole-{k}"), nu, eta));
    }
    for k in 0..10 {
        let s = 0.12 * 1.15f64.powi(k);
        let angle = 0.29 * k as f64;
        let offset = Vec2::polar(0.15 + 0.02 * k as f64, 2.1 * k as f64);
        let arm = 0.6 * s + 0.12;
        let charges: Vec<(Vec2, f64)> = (0..4)
            .map(|j| {
                let q = if j % 2 == 0 { 1.0 } else { -1.0 };
                (offset + Vec2::polar(arm, angle + 0.5 * PI * j as f64), q)
            })
            .collect();
        let nu = bump_multipole(grid, &charges, s)?;
        out.push(case(format!("quadrupole-{k}"), nu, eta));
    }
    Ok(out)
}

fn case(label: String, nu: SignedGridMeasure, eta: SmearingRadius) -> MinEnergyCase {
    let delta = 1.0 / nu.first_moment();
    MinEnergyCase { label, nu, eta, delta }
}
