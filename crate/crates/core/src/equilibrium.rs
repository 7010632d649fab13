//! Equilibrium measure `mu_V` and thermal equilibrium measure `mu_theta` on a
//! uniform grid.
//!
//! Densities are treated as piecewise constant on cells. The potential
//! `h^mu(x) = int -log|x - y| mu(dy)` is evaluated exactly for that piecewise
//! constant density: near cells use the closed-form integral of `-log` over a
//! square, far cells a fourth-order multipole expansion of the same integral
//! (agreeing with the closed form to ~1e-12 relative at the switch).

use crate::error::{Error, Result};
use crate::fft::Convolver;
use crate::geometry::Vec2;
use crate::grid::{GridField, GridMeasure, GridSpec};
use crate::kernel::{rect_neg_log_integral, square_pair_neg_log_integral};
use crate::krylov;
use crate::parallel::{self, Execution};
use crate::potential::PotentialSpec;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Offsets (in cells, sup norm) up to which [`cell_kernel`] integrates exactly.
pub const NEAR_CELLS: f64 = 16.0;

/// Densities below this are flushed to zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Cells with density above this enter the EL residual.
pub const RESIDUAL_SUPPORT: f64 = 1e-12;

/// `int -log|z| dz` over the square of side `h` centred at `u`.
#[inline]
pub fn cell_kernel(u: Vec2, h: f64) -> f64 {
    let near = NEAR_CELLS * h;
    if u.x.abs() <= near && u.y.abs() <= near {
        let hh = 0.5 * h;
        rect_neg_log_integral(u.x - hh, u.x + hh, u.y - hh, u.y + hh)
    } else {
        // Cell mean of -log: the h^2 term vanishes because -log is harmonic,
        // the next one is h^4 / 1440 * d_xxyy(-log r) = -h^4 Re(z^-4) / 240.
        let (x2, y2) = (u.x * u.x, u.y * u.y);
        let r2 = x2 + y2;
        let re_z4 = (x2 * x2 - 6.0 * x2 * y2 + y2 * y2) / (r2 * r2 * r2 * r2);
        let h2 = h * h;
        h2 * (-0.5 * r2.ln() - h2 * h2 * re_z4 / 240.0)
    }
}

/// Mean over the cell centred at `u` of [`cell_kernel`] evaluated from the
/// cell at the origin: `int_{S_0} int_{S_u} -log|x - y| / h^2`. Summed
/// against two cell densities this is their exact interaction energy.
#[inline]
pub fn cell_pair_kernel(u: Vec2, h: f64) -> f64 {
    let near = NEAR_CELLS * h;
    if u.x.abs() <= near && u.y.abs() <= near {
        square_pair_neg_log_integral(u, h) / (h * h)
    } else {
        // Both cells contribute the h^4 term of cell_kernel.
        let (x2, y2) = (u.x * u.x, u.y * u.y);
        let r2 = x2 + y2;
        let re_z4 = (x2 * x2 - 6.0 * x2 * y2 + y2 * y2) / (r2 * r2 * r2 * r2);
        let h2 = h * h;
        h2 * (-0.5 * r2.ln() - h2 * h2 * re_z4 / 120.0)
    }
}

/// Grid convolution with the cell-integrated Coulomb kernel.
pub struct CoulombOperator {
    grid: GridSpec,
    conv: Convolver,
    exec: Execution,
}

impl CoulombOperator {
    pub fn new(grid: GridSpec, exec: Execution) -> Self {
        let h = grid.cell;
        let conv = Convolver::new(
            grid.nx,
            grid.ny,
            move |dx, dy| cell_kernel(Vec2::new(dx as f64 * h, dy as f64 * h), h),
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

    /// `h^rho` at every cell centre for a density `rho` on the grid.
    pub fn potential(&self, density: &[f64]) -> Vec<f64> {
        self.conv.apply(density)
    }

    pub fn potential_field(&self, nu: &GridMeasure) -> Result<GridField> {
        self.check_grid(&nu.grid)?;
        GridField::new(self.grid, self.potential(&nu.density))
    }

    fn check_grid(&self, g: &GridSpec) -> Result<()> {
        if *g != self.grid {
            return Err(Error::InvalidParameter(
                "measure lives on a different grid than the operator".into(),
            ));
        }
        Ok(())
    }
}

/// `h^nu(y)` by direct summation over cells.
pub fn grid_potential(nu: &GridMeasure, y: Vec2) -> f64 {
    potential_at(Execution::default(), &nu.grid, &nu.density, y)
}

/// Direct-sum potential of a (possibly signed) cell density at `y`.
pub fn potential_at(exec: Execution, grid: &GridSpec, density: &[f64], y: Vec2) -> f64 {
    let h = grid.cell;
    parallel::map_sum(exec, 0..density.len(), |j| {
        let d = density[j];
        if d == 0.0 {
            0.0
        } else {
            d * cell_kernel(y - grid.center_of(j), h)
        }
    })
}

/// `h^nu` at every cell centre, via FFT convolution.
pub fn grid_potential_field(nu: &GridMeasure) -> GridField {
    let op = CoulombOperator::new(nu.grid, Execution::default());
    GridField {
        grid: nu.grid,
        values: op.potential(&nu.density),
    }
}

/// `V` sampled at cell centres.
pub fn sample_potential(v: &PotentialSpec, grid: &GridSpec) -> Vec<f64> {
    (0..grid.len()).map(|i| v.evaluate(grid.center_of(i))).collect()
}

/// Square grid with half-width `margin` times the predicted support radius.
pub fn default_grid(v: &PotentialSpec, margin: f64, cells: usize) -> Result<GridSpec> {
    let r = v.support_radius_estimate();
    let c = match v {
        PotentialSpec::Quadratic { center, .. } => *center,
        _ => Vec2::ZERO,
    };
    let hw = margin * r;
    GridSpec::new(Vec2::new(c.x - hw, c.y - hw), 2.0 * hw / cells as f64, cells, cells)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumOptions {
    /// Outer updates of the boundary data.
    pub max_iter: usize,
    /// Stopping threshold on the largest change of a projected SOR sweep.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    /// Allowed negativity of `zeta_V`, in units of `cell * sup|grad V|` over
    /// the support.
    pub zeta_tolerance_cells: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            sweep_tol: 1e-13,
            max_sweeps: 200_000,
            zeta_tolerance_cells: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    pub mu: GridMeasure,
    /// `h^mu + V`, with `h^mu` from the cell-integrated kernel.
    pub total_potential: GridField,
    pub c_v: f64,
    /// Sup over the support of `|h^mu + V - c_V|`.
    pub residual: f64,
    pub iterations: usize,
    /// Scale used to judge `zeta_V` negativity.
    pub tolerance: f64,
}

/// `mu_V` as the solution of the discrete obstacle problem for
/// `zeta = h^mu + V - c_V`:
///
/// `zeta >= 0`, `Delta V - Delta zeta >= 0`, with equality in one of the two
/// on every cell, and `mu = (Delta V - Delta zeta) / (2 pi)`.
///
/// On the coincidence set `{zeta = 0}` this places the density
/// `Delta V / (2 pi)`; boundary cells of the support receive a fractional
/// share through the discrete Laplacian. Each inner solve is a projected SOR
/// iteration with Dirichlet data `V + h^mu - c` on the outer ring of cells.
/// The constant `c` is fixed by a secant search on the total mass, and the
/// Dirichlet data are refreshed from the new `mu` until they stop changing.
pub fn solve_equilibrium(v: &PotentialSpec, grid: GridSpec, opts: &EquilibriumOptions) -> Result<EquilibriumSolution> {
    let op = CoulombOperator::new(grid, Execution::default());
    solve_equilibrium_with(&op, v, opts)
}

/// Grids with even sides of at least [`CASCADE_MIN`] cells are first solved at
/// half resolution, and the coarse `zeta_V` seeds the fine iteration.
pub fn solve_equilibrium_with(
    op: &CoulombOperator,
    v: &PotentialSpec,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    v.validate()?;
    let grid = *op.grid();
    let seed = if grid.nx.is_multiple_of(2) && grid.ny.is_multiple_of(2) && grid.nx.min(grid.ny) >= CASCADE_MIN {
        let coarse = GridSpec::new(grid.origin, 2.0 * grid.cell, grid.nx / 2, grid.ny / 2)?;
        let sol = solve_equilibrium_with(&CoulombOperator::new(coarse, op.execution()), v, opts)?;
        let zeta = GridField::from_fn(grid, |p| (sol.total_potential.interpolate(p) - sol.c_v).max(0.0));
        let density: Vec<f64> = (0..grid.len()).map(|i| sol.mu.density_at(grid.center_of(i))).collect();
        Some((zeta.values, density, sol.c_v))
    } else {
        None
    };
    obstacle_solve(op, v, opts, seed)
}

/// Smallest side length that is solved through a coarser grid first.
const CASCADE_MIN: usize = 96;

fn obstacle_solve(
    op: &CoulombOperator,
    v: &PotentialSpec,
    opts: &EquilibriumOptions,
    seed: Option<(Vec<f64>, Vec<f64>, f64)>,
) -> Result<EquilibriumSolution> {
    let grid = *op.grid();
    if grid.nx < 5 || grid.ny < 5 {
        return Err(Error::InvalidParameter(
            "obstacle solver needs at least 5x5 cells".into(),
        ));
    }
    let area = grid.cell_area();
    let vv = sample_potential(v, &grid);
    let lap_v = discrete_laplacian(&grid, &vv);
    let target: Vec<f64> = lap_v.iter().map(|l| (l / (2.0 * PI)).max(0.0)).collect();
    if target.iter().sum::<f64>() * area < 1.0 {
        return Err(Error::Precondition(
            "grid cannot hold unit mass at density Delta V / (2 pi)".into(),
        ));
    }

    let (seed_zeta, seed_density, seed_c) = match seed {
        Some((z, d, c)) => (Some(z), Some(d), Some(c)),
        None => (None, None, None),
    };
    // Without a seed, fill cells by increasing V.
    let mut density = if let Some(d) = seed_density {
        let mass: f64 = d.iter().sum::<f64>() * area;
        d.into_iter().map(|x| x / mass).collect()
    } else {
        let mut order: Vec<usize> = (0..grid.len()).filter(|&i| target[i] > 0.0).collect();
        order.sort_by(|&a, &b| vv[a].total_cmp(&vv[b]).then(a.cmp(&b)));
        let mut d = vec![0.0; grid.len()];
        let mut left = 1.0;
        for i in order {
            let m = (target[i] * area).min(left);
            d[i] = m / area;
            left -= m;
            if left <= 0.0 {
                break;
            }
        }
        d
    };
    let mut h = op.potential(&density);
    let mut c = seed_c.unwrap_or_else(|| {
        let total: Vec<f64> = h.iter().zip(&vv).map(|(a, b)| a + b).collect();
        support_constant(&total, &density, area).0
    });
    let ring = outer_ring(&grid);
    let mut zeta: Vec<f64> =
        seed_zeta.unwrap_or_else(|| (0..grid.len()).map(|i| (vv[i] + h[i] - c).max(0.0)).collect());
    let mut last_change = f64::INFINITY;

    for it in 0..opts.max_iter {
        let boundary: Vec<f64> = ring.iter().map(|&i| vv[i] + h[i]).collect();
        // Secant search for c with unit mass.
        let mass_at = |c: f64, zeta: &mut Vec<f64>| -> Result<f64> {
            for (k, &i) in ring.iter().enumerate() {
                zeta[i] = boundary[k] - c;
            }
            psor(&grid, &lap_v, zeta, opts)?;
            Ok(obstacle_density(&grid, &lap_v, zeta).iter().sum::<f64>() * area)
        };
        let (mut c0, mut m0) = (c, mass_at(c, &mut zeta)?);
        let mut c1 = c0 + if m0 < 1.0 { 1e-3 } else { -1e-3 };
        let mut m1 = mass_at(c1, &mut zeta)?;
        for _ in 0..60 {
            if (m1 - 1.0).abs() < 1e-13 || m1 == m0 {
                break;
            }
            let c2 = c1 - (m1 - 1.0) * (c1 - c0) / (m1 - m0);
            c0 = c1;
            m0 = m1;
            c1 = c2;
            m1 = mass_at(c1, &mut zeta)?;
        }
        c = c1;
        density = obstacle_density(&grid, &lap_v, &zeta);
        let mass: f64 = density.iter().sum::<f64>() * area;
        density.iter_mut().for_each(|d| *d /= mass);
        h = op.potential(&density);
        let change = ring
            .iter()
            .zip(&boundary)
            .map(|(&i, b)| (vv[i] + h[i] - b).abs())
            .fold(0.0, f64::max);
        if change < 1e-11 || (change >= last_change && change < 1e-8) {
            let total: Vec<f64> = h.iter().zip(&vv).map(|(a, b)| a + b).collect();
            let (c_v, residual) = support_constant(&total, &density, area);
            return finish(grid, v, (density, total, c_v, residual), it + 1, opts);
        }
        last_change = change;
    }
    Err(Error::NonConvergence {
        solver: "equilibrium obstacle solver",
        iterations: opts.max_iter,
        residual: last_change,
        advice: "; try a larger grid margin",
    })
}

/// Five-point Laplacian; one-sided copies on the outer ring (unused there).
fn discrete_laplacian(grid: &GridSpec, f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = grid.cell_area();
    let mut out = vec![0.0; f.len()];
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            let i = iy * nx + ix;
            out[i] = (f[i - 1] + f[i + 1] + f[i - nx] + f[i + nx] - 4.0 * f[i]) / h2;
        }
    }
    out
}

fn outer_ring(grid: &GridSpec) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| {
            let (ix, iy) = grid.coords(i);
            ix == 0 || iy == 0 || ix == grid.nx - 1 || iy == grid.ny - 1
        })
        .collect()
}

/// Projected SOR for the obstacle problem on interior cells.
fn psor(grid: &GridSpec, lap_v: &[f64], zeta: &mut [f64], opts: &EquilibriumOptions) -> Result<()> {
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = grid.cell_area();
    let n = nx.max(ny) as f64;
    let omega = 2.0 / (1.0 + (PI / n).sin());
    let scale = zeta.iter().fold(1.0f64, |m, z| m.max(z.abs()));
    for sweep in 0..opts.max_sweeps {
        let mut change = 0.0f64;
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let i = iy * nx + ix;
                let gs = 0.25 * (zeta[i - 1] + zeta[i + 1] + zeta[i - nx] + zeta[i + nx] - h2 * lap_v[i]);
                let new = (zeta[i] + omega * (gs - zeta[i])).max(0.0);
                change = change.max((new - zeta[i]).abs());
                zeta[i] = new;
            }
        }
        if change <= opts.sweep_tol * scale {
            return Ok(());
        }
        if !change.is_finite() {
            return Err(Error::NonConvergence {
                solver: "projected SOR",
                iterations: sweep + 1,
                residual: change,
                advice: "",
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "projected SOR",
        iterations: opts.max_sweeps,
        residual: f64::NAN,
        advice: "; raise max_sweeps",
    })
}

/// `(Delta V - Delta zeta) / (2 pi)` on the coincidence set `{zeta = 0}`.
fn obstacle_density(grid: &GridSpec, lap_v: &[f64], zeta: &[f64]) -> Vec<f64> {
    let lz = discrete_laplacian(grid, zeta);
    let ring = |i: usize| {
        let (ix, iy) = grid.coords(i);
        ix == 0 || iy == 0 || ix == grid.nx - 1 || iy == grid.ny - 1
    };
    (0..zeta.len())
        .map(|i| {
            if ring(i) || zeta[i] > 0.0 {
                0.0
            } else {
                ((lap_v[i] - lz[i]) / (2.0 * PI)).max(0.0)
            }
        })
        .collect()
}

fn finish(
    grid: GridSpec,
    v: &PotentialSpec,
    (density, total, c_v, residual): (Vec<f64>, Vec<f64>, f64, f64),
    iterations: usize,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    let mu = GridMeasure::new(grid, density)?;
    let grad = (0..grid.len())
        .filter(|&i| mu.density[i] > 0.0)
        .map(|i| v.gradient(grid.center_of(i)).norm())
        .fold(0.0, f64::max);
    Ok(EquilibriumSolution {
        mu,
        total_potential: GridField::new(grid, total)?,
        c_v,
        residual,
        iterations,
        tolerance: opts.zeta_tolerance_cells * grid.cell * grad.max(1.0),
    })
}

/// Mass-weighted mean of `total` and the sup deviation from it over cells
/// with density above [`RESIDUAL_SUPPORT`].
fn support_constant(total: &[f64], density: &[f64], area: f64) -> (f64, f64) {
    let mass: f64 = density.iter().sum::<f64>() * area;
    let c = total.iter().zip(density).map(|(t, d)| t * d).sum::<f64>() * area / mass;
    let r = total
        .iter()
        .zip(density)
        .filter(|(_, d)| **d > RESIDUAL_SUPPORT)
        .map(|(t, _)| (t - c).abs())
        .fold(0.0, f64::max);
    (c, r)
}

/// Effective confinement `zeta_V = h^{mu_V} + V - c_V`.
///
/// Fails when `zeta_V` dips below `-tolerance` anywhere on the grid.
pub fn zeta_v(sol: &EquilibriumSolution) -> Result<GridField> {
    let values: Vec<f64> = sol.total_potential.values.iter().map(|t| t - sol.c_v).collect();
    let field = GridField::new(sol.mu.grid, values)?;
    let min = field.min();
    if min < -sol.tolerance {
        return Err(Error::SolverQuality(format!(
            "zeta_V reaches {min:.3e}, below -{:.3e}",
            sol.tolerance
        )));
    }
    Ok(field)
}

/// `int mu log mu` with `0 log 0 = 0`.
pub fn thermal_entropy(mu: &GridMeasure) -> f64 {
    mu.density.iter().filter(|d| **d > 0.0).map(|d| d * d.ln()).sum::<f64>() * mu.grid.cell_area()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThermalOptions {
    /// Damping of the fixed-point warm-up, halved whenever the residual grows.
    pub damping: f64,
    /// Target sup-norm EL residual.
    pub tol: f64,
    /// Damped fixed-point iterations before switching to Newton.
    pub picard_iter: usize,
    pub newton_iter: usize,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
}

impl Default for ThermalOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            picard_iter: 20,
            newton_iter: 60,
            gmres_restart: 150,
            gmres_max_iter: 3000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ThermalSolution {
    pub theta: f64,
    pub mu_theta: GridMeasure,
    /// `h^{mu_theta}` at cell centres.
    pub potential: GridField,
    pub c_theta: f64,
    pub residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub krylov_iterations: usize,
}

impl ThermalSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.mu_theta.grid
    }

    /// Bilinear interpolation of the density; zero off the grid.
    pub fn density_at(&self, p: Vec2) -> f64 {
        self.mu_theta.density_at(p)
    }

    /// `h^{mu_theta}(p)` by direct summation (exact for the cell density).
    pub fn potential_at(&self, p: Vec2) -> f64 {
        grid_potential(&self.mu_theta, p)
    }

    /// `h^{mu_theta}(p)` by bilinear interpolation of the stored field.
    pub fn potential_interpolated(&self, p: Vec2) -> f64 {
        self.potential.interpolate(p)
    }

    pub fn sup_density(&self) -> f64 {
        self.mu_theta.sup()
    }
}

/// `mu_theta` for confinement `v` at `theta = beta N`.
pub fn solve_thermal(v: &PotentialSpec, theta: f64, grid: GridSpec, opts: &ThermalOptions) -> Result<ThermalSolution> {
    let op = CoulombOperator::new(grid, Execution::default());
    solve_thermal_with(&op, v, theta, opts, None)
}

/// Gibbs density `exp(-theta w) / Z` with underflow flushed to zero.
fn gibbs(w: &[f64], theta: f64, area: f64) -> Vec<f64> {
    let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
    let mut mu: Vec<f64> = w.iter().map(|x| (-theta * (x - wmin)).exp()).collect();
    let z: f64 = mu.iter().sum::<f64>() * area;
    for m in mu.iter_mut() {
        *m /= z;
        if *m < DENSITY_FLOOR {
            *m = 0.0;
        }
    }
    mu
}

/// As [`solve_thermal`], reusing an operator and optionally warm-starting
/// from a density previously solved at a nearby `theta`.
///
/// The unknown is the effective potential `w = V + h^mu`, with
/// `mu = exp(-theta w) / Z`. From a cold start a damped fixed point on `mu`
/// runs at `min(theta, CONTINUATION_START)`; Newton steps on
/// `F(w) = w - V - h^{mu(w)}` (GMRES inner solves, backtracking on `|F|`) then
/// follow `theta` upward by factors of at most two. The ratio shrinks when a
/// stage fails, since `exp(-theta w)` becomes very stiff at large `theta`.
pub fn solve_thermal_with(
    op: &CoulombOperator,
    v: &PotentialSpec,
    theta: f64,
    opts: &ThermalOptions,
    init: Option<&GridMeasure>,
) -> Result<ThermalSolution> {
    v.validate()?;
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()));
    }
    let grid = *op.grid();
    let area = grid.cell_area();
    let vv = sample_potential(v, &grid);
    let mut stats = Stats::default();

    let (mut w, mut reached) = match init {
        Some(m) => {
            if m.grid != grid {
                return Err(Error::InvalidParameter("warm start on a different grid".into()));
            }
            let h = op.potential(&m.density);
            // The warm start is only trusted up to the same stage ratio.
            (vv.iter().zip(&h).map(|(a, b)| a + b).collect::<Vec<f64>>(), theta / 2.0)
        }
        None => {
            let theta0 = theta.min(CONTINUATION_START);
            let w = picard(op, &vv, theta0, opts, &mut stats);
            let w = newton(op, &vv, theta0, w, opts, &mut stats).map_err(|r| non_convergence(r, stats.iterations))?;
            (w, theta0)
        }
    };

    let mut ratio: f64 = 2.0;
    while reached < theta {
        let next = (reached * ratio).min(theta);
        match newton(op, &vv, next, w.clone(), opts, &mut stats) {
            Ok(wn) => {
                w = wn;
                reached = next;
            }
            Err(r) => {
                ratio = 1.0 + 0.5 * (ratio - 1.0);
                if ratio < 1.01 {
                    return Err(non_convergence(r, stats.iterations));
                }
            }
        }
    }

    let mu_final = gibbs(&w, theta, area);
    let h = op.potential(&mu_final);
    let (c_theta, residual) = el_residual_parts(&mu_final, &h, &vv, theta, area);
    if !(residual <= opts.tol) {
        return Err(non_convergence(residual, stats.iterations));
    }
    Ok(ThermalSolution {
        theta,
        mu_theta: GridMeasure::new(grid, mu_final)?,
        potential: GridField::new(grid, h)?,
        c_theta,
        residual,
        iterations: stats.iterations,
        newton_steps: stats.newton_steps,
        krylov_iterations: stats.krylov_iterations,
    })
}

/// Largest `theta` at which a cold start is attempted directly.
pub const CONTINUATION_START: f64 = 50.0;

#[derive(Default)]
struct Stats {
    iterations: usize,
    newton_steps: usize,
    krylov_iterations: usize,
}

fn non_convergence(residual: f64, iterations: usize) -> Error {
    Error::NonConvergence {
        solver: "thermal equilibrium solver",
        iterations,
        residual,
        advice: "; reduce the damping or refine the grid",
    }
}

/// Damped fixed point `mu <- (1 - a) mu + a exp(-theta (V + h^mu)) / Z`,
/// halving `a` whenever the residual grows. Returns `w = V + h^mu`.
fn picard(op: &CoulombOperator, vv: &[f64], theta: f64, opts: &ThermalOptions, stats: &mut Stats) -> Vec<f64> {
    let area = op.grid().cell_area();
    let mut mu = gibbs(vv, theta, area);
    let mut alpha = opts.damping;
    let mut last = f64::INFINITY;
    let mut h = op.potential(&mu);
    for _ in 0..opts.picard_iter {
        let res = el_residual_parts(&mu, &h, vv, theta, area).1;
        stats.iterations += 1;
        if res <= opts.tol {
            break;
        }
        if res > last {
            alpha *= 0.5;
        }
        last = res;
        let w: Vec<f64> = vv.iter().zip(&h).map(|(a, b)| a + b).collect();
        let cand = gibbs(&w, theta, area);
        for (m, c) in mu.iter_mut().zip(&cand) {
            *m = (1.0 - alpha) * *m + alpha * c;
        }
        h = op.potential(&mu);
    }
    vv.iter().zip(&h).map(|(a, b)| a + b).collect()
}

/// Newton iteration on `F(w) = w - V - h^{mu(w)}` at fixed `theta`. On
/// failure returns the last sup-norm residual.
fn newton(
    op: &CoulombOperator,
    vv: &[f64],
    theta: f64,
    mut w: Vec<f64>,
    opts: &ThermalOptions,
    stats: &mut Stats,
) -> std::result::Result<Vec<f64>, f64> {
    let exec = op.execution();
    let area = op.grid().cell_area();
    let residual_of = |w: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mu = gibbs(w, theta, area);
        let h = op.potential(&mu);
        let f: Vec<f64> = (0..w.len()).map(|i| w[i] - vv[i] - h[i]).collect();
        (f, mu)
    };
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // The EL residual equals sup |F| up to the additive constant, so aim a
    // little below the requested tolerance.
    let target = 0.25 * opts.tol;
    let (mut f, mut mu) = residual_of(&w);
    let mut fnorm = krylov::norm(exec, &f);
    for _ in 0..opts.newton_iter {
        if sup(&f) <= target {
            return Ok(w);
        }
        stats.newton_steps += 1;
        stats.iterations += 1;
        let mu_ref = mu.clone();
        let jac = |d: &[f64]| -> Vec<f64> {
            let mean: f64 = mu_ref.iter().zip(d).map(|(m, x)| m * x).sum::<f64>() * area;
            let src: Vec<f64> = mu_ref.iter().zip(d).map(|(m, x)| m * (x - mean)).collect();
            let k = op.potential(&src);
            d.iter().zip(&k).map(|(x, kk)| x + theta * kk).collect()
        };
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let forcing = (0.5 * fnorm.sqrt()).clamp(1e-6, 1e-2);
        let (dw, out) = krylov::gmres(exec, jac, &rhs, opts.gmres_restart, opts.gmres_max_iter, forcing);
        stats.krylov_iterations += out.iterations;
        if !(out.relative_residual < 1.0) {
            // GMRES made no progress; the direction is useless.
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + step * b).collect();
            let (ft, mt) = residual_of(&trial);
            let tn = krylov::norm(exec, &ft);
            if tn.is_finite() && tn <= (1.0 - 1e-4 * step) * fnorm {
                w = trial;
                f = ft;
                mu = mt;
                fnorm = tn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if sup(&f) <= target {
        Ok(w)
    } else {
        Err(sup(&f))
    }
}

/// `c_theta` (density-weighted mean of `h + V + log(mu) / theta`) and the sup
/// deviation from it over cells with `mu > 1e-12`.
fn el_residual_parts(mu: &[f64], h: &[f64], vv: &[f64], theta: f64, area: f64) -> (f64, f64) {
    let zeta: Vec<f64> = (0..mu.len())
        .map(|i| {
            if mu[i] > 0.0 {
                h[i] + vv[i] + mu[i].ln() / theta
            } else {
                0.0
            }
        })
        .collect();
    support_constant(&zeta, mu, area)
}

/// Sup-norm EL residual of an arbitrary density (diagnostic).
pub fn thermal_residual(op: &CoulombOperator, v: &PotentialSpec, theta: f64, mu: &GridMeasure) -> (f64, f64) {
    let vv = sample_potential(v, op.grid());
    let h = op.potential(&mu.density);
    el_residual_parts(&mu.density, &h, &vv, theta, op.grid().cell_area())
}

/// Provenance written next to a saved measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSidecar {
    pub potential: PotentialSpec,
    pub potential_name: String,
    /// `None` for `mu_V`.
    pub theta: Option<f64>,
    pub tolerance: f64,
    pub iterations: usize,
    pub residual: f64,
    pub constant: f64,
}

impl MeasureSidecar {
    pub fn thermal(v: &PotentialSpec, sol: &ThermalSolution, opts: &ThermalOptions) -> Self {
        Self {
            potential: v.clone(),
            potential_name: v.name().to_string(),
            theta: Some(sol.theta),
            tolerance: opts.tol,
            iterations: sol.iterations,
            residual: sol.residual,
            constant: sol.c_theta,
        }
    }

    pub fn equilibrium(v: &PotentialSpec, sol: &EquilibriumSolution) -> Self {
        Self {
            potential: v.clone(),
            potential_name: v.name().to_string(),
            theta: None,
            tolerance: sol.tolerance,
            iterations: sol.iterations,
            residual: sol.residual,
            constant: sol.c_v,
        }
    }
}

/// Rebuild a [`ThermalSolution`] from a saved density, recomputing
/// `h^{mu_theta}` on its grid.
pub fn thermal_from_saved(mu: GridMeasure, sidecar: &MeasureSidecar) -> Result<ThermalSolution> {
    let theta = sidecar
        .theta
        .ok_or_else(|| Error::Format("sidecar describes mu_V, not mu_theta".into()))?;
    let op = CoulombOperator::new(mu.grid, Execution::default());
    let potential = op.potential_field(&mu)?;
    Ok(ThermalSolution {
        theta,
        mu_theta: mu,
        potential,
        c_theta: sidecar.constant,
        residual: sidecar.residual,
        iterations: sidecar.iterations,
        newton_steps: 0,
        krylov_iterations: 0,
    })
}
