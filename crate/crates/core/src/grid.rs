//! Uniform square grids and densities sampled on them.
//!
//! Values live at cell centres, stored row-major with `x` varying fastest:
//! `index = iy * nx + ix`.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lower-left corner of cell `(0, 0)`.
    pub origin: Vec2,
    /// Side length of a (square) cell.
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: Vec2, cell: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(cell.is_finite() && cell > 0.0) || nx == 0 || ny == 0 || !origin.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid grid: cell={cell}, nx={nx}, ny={ny}"
            )));
        }
        Ok(Self { origin, cell, nx, ny })
    }

    /// `cells x cells` grid covering `[-half_width, half_width]^2`.
    pub fn centered(half_width: f64, cells: usize) -> Result<Self> {
        Self::new(
            Vec2::new(-half_width, -half_width),
            2.0 * half_width / cells as f64,
            cells,
            cells,
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell * self.cell
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell,
            self.origin.y + (iy as f64 + 0.5) * self.cell,
        )
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Vec2 {
        let (ix, iy) = self.coords(idx);
        self.center(ix, iy)
    }

    /// Upper-right corner of the grid.
    pub fn extent(&self) -> Vec2 {
        Vec2::new(
            self.origin.x + self.nx as f64 * self.cell,
            self.origin.y + self.ny as f64 * self.cell,
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let e = self.extent();
        p.x >= self.origin.x && p.x < e.x && p.y >= self.origin.y && p.y < e.y
    }

    /// Cell containing `p`.
    pub fn locate(&self, p: Vec2) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let ix = (((p.x - self.origin.x) / self.cell) as usize).min(self.nx - 1);
        let iy = (((p.y - self.origin.y) / self.cell) as usize).min(self.ny - 1);
        Some((ix, iy))
    }

    /// Same extent, half the cell size.
    pub fn refined(&self) -> Self {
        Self {
            origin: self.origin,
            cell: 0.5 * self.cell,
            nx: 2 * self.nx,
            ny: 2 * self.ny,
        }
    }

    /// Same cell size, shifted by whole cells.
    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        Self {
            origin: self.origin + Vec2::new(dx as f64 * self.cell, dy as f64 * self.cell),
            ..*self
        }
    }

    /// Bilinear weights of the four cell centres surrounding `p`, clamped to
    /// the hull of the centres.
    pub fn bilinear_stencil(&self, p: Vec2) -> [(usize, f64); 4] {
        let fx = ((p.x - self.origin.x) / self.cell - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p.y - self.origin.y) / self.cell - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let iy = (fy.floor() as usize).min(self.ny.saturating_sub(2));
        let tx = if self.nx > 1 { fx - ix as f64 } else { 0.0 };
        let ty = if self.ny > 1 { fy - iy as f64 } else { 0.0 };
        let ix1 = (ix + 1).min(self.nx - 1);
        let iy1 = (iy + 1).min(self.ny - 1);
        [
            (self.index(ix, iy), (1.0 - tx) * (1.0 - ty)),
            (self.index(ix1, iy), tx * (1.0 - ty)),
            (self.index(ix, iy1), (1.0 - tx) * ty),
            (self.index(ix1, iy1), tx * ty),
        ]
    }
}

/// A scalar field on cell centres (potentials, `zeta_V`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn<F: Fn(Vec2) -> f64>(grid: GridSpec, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center_of(i))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    pub fn interpolate(&self, p: Vec2) -> f64 {
        self.grid
            .bilinear_stencil(p)
            .iter()
            .map(|&(i, w)| w * self.values[i])
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn integrate(values: &[f64], area: f64) -> f64 {
    values.iter().sum::<f64>() * area
}

/// A nonnegative density on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: GridSpec,
    pub density: Vec<f64>,
    /// `sum(density) * cell^2`, kept in sync by the constructors.
    pub mass: f64,
}

impl GridMeasure {
    pub fn new(grid: GridSpec, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "measure has {} values for a grid of {} cells",
                density.len(),
                grid.len()
            )));
        }
        if let Some(bad) = density.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "density must be finite and nonnegative, found {bad}"
            )));
        }
        let mass = integrate(&density, grid.cell_area());
        Ok(Self { grid, density, mass })
    }

    pub fn zero(grid: GridSpec) -> Self {
        Self {
            grid,
            density: vec![0.0; grid.len()],
            mass: 0.0,
        }
    }

    /// Density `f` sampled at cell centres, rescaled to unit mass.
    pub fn normalized_from_fn<F: Fn(Vec2) -> f64>(grid: GridSpec, f: F) -> Result<Self> {
        let mut m = Self::new(grid, GridField::from_fn(grid, f).values)?;
        m.normalize()?;
        Ok(m)
    }

    pub fn normalize(&mut self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter("cannot normalize a zero measure".into()));
        }
        let s = 1.0 / self.mass;
        self.density.iter_mut().for_each(|d| *d *= s);
        self.mass = integrate(&self.density, self.grid.cell_area());
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let density: Vec<f64> = self.density.iter().map(|d| d * s).collect();
        let mass = integrate(&density, self.grid.cell_area());
        Self {
            grid: self.grid,
            density,
            mass,
        }
    }

    pub fn sup(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear interpolation of the density.
    pub fn density_at(&self, p: Vec2) -> f64 {
        if !self.grid.contains(p) {
            return 0.0;
        }
        self.grid
            .bilinear_stencil(p)
            .iter()
            .map(|&(i, w)| w * self.density[i])
            .sum()
    }

    /// Mass of the cells whose centre satisfies `pred`.
    pub fn mass_where<F: Fn(Vec2) -> bool>(&self, pred: F) -> f64 {
        let a = self.grid.cell_area();
        self.density
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(self.grid.center_of(*i)))
            .map(|(_, d)| d * a)
            .sum()
    }

    pub fn l1_distance(&self, other: &GridMeasure) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("L1 distance needs equal grids".into()));
        }
        Ok(self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_area())
    }

    pub fn to_signed(&self) -> SignedGridMeasure {
        SignedGridMeasure {
            grid: self.grid,
            density: self.density.clone(),
            total_mass: self.mass,
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_grid_binary(&mut w, &self.grid, self.mass, &self.density)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let (grid, mass, density) = read_grid_binary(&mut r)?;
        let m = Self::new(grid, density)?;
        let tol = 1e-12 * mass.abs().max(1.0);
        if (m.mass - mass).abs() > tol {
            return Err(Error::Format(format!(
                "stored mass {mass} does not match density integral {}",
                m.mass
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }
}

/// A density of either sign, e.g. `(emp_N - mu_theta) * phi_eta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedGridMeasure {
    pub grid: GridSpec,
    pub density: Vec<f64>,
    pub total_mass: f64,
}

impl SignedGridMeasure {
    pub fn new(grid: GridSpec, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "measure has {} values for a grid of {} cells",
                density.len(),
                grid.len()
            )));
        }
        if density.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("density must be finite".into()));
        }
        let total_mass = integrate(&density, grid.cell_area());
        Ok(Self {
            grid,
            density,
            total_mass,
        })
    }

    pub fn from_fn<F: Fn(Vec2) -> f64>(grid: GridSpec, f: F) -> Result<Self> {
        Self::new(grid, GridField::from_fn(grid, f).values)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let density: Vec<f64> = self.density.iter().map(|d| d * s).collect();
        let total_mass = integrate(&density, self.grid.cell_area());
        Self {
            grid: self.grid,
            density,
            total_mass,
        }
    }

    /// `int |nu|`.
    pub fn total_variation(&self) -> f64 {
        integrate(
            &self.density.iter().map(|d| d.abs()).collect::<Vec<_>>(),
            self.grid.cell_area(),
        )
    }

    /// `int |x| |nu|(dx)`.
    pub fn first_moment(&self) -> f64 {
        let a = self.grid.cell_area();
        self.density
            .iter()
            .enumerate()
            .map(|(i, d)| d.abs() * self.grid.center_of(i).norm() * a)
            .sum()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_grid_binary(&mut w, &self.grid, self.total_mass, &self.density)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let (grid, _, density) = read_grid_binary(&mut r)?;
        Self::new(grid, density)
    }
}

pub const GRID_MAGIC: [u8; 8] = *b"C2DGRID\0";
pub const GRID_FORMAT_VERSION: u64 = 1;
pub const GRID_HEADER_LEN: usize = 64;

fn write_grid_binary<W: Write>(w: &mut W, grid: &GridSpec, mass: f64, values: &[f64]) -> Result<()> {
    let mut header = Vec::with_capacity(GRID_HEADER_LEN);
    header.extend_from_slice(&GRID_MAGIC);
    header.extend_from_slice(&GRID_FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&grid.origin.x.to_le_bytes());
    header.extend_from_slice(&grid.origin.y.to_le_bytes());
    header.extend_from_slice(&grid.cell.to_le_bytes());
    header.extend_from_slice(&(grid.nx as u64).to_le_bytes());
    header.extend_from_slice(&(grid.ny as u64).to_le_bytes());
    header.extend_from_slice(&mass.to_le_bytes());
    debug_assert_eq!(header.len(), GRID_HEADER_LEN);
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(values.len() * 8);
    for v in values {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

fn read_grid_binary<R: Read>(r: &mut R) -> Result<(GridSpec, f64, Vec<f64>)> {
    let mut header = [0u8; GRID_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("grid header: {e}")))?;
    if header[..8] != GRID_MAGIC {
        return Err(Error::Format("bad grid magic".into()));
    }
    let word = |k: usize| -> [u8; 8] { header[8 * k..8 * k + 8].try_into().unwrap() };
    let version = u64::from_le_bytes(word(1));
    if version != GRID_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported grid version {version}")));
    }
    let origin = Vec2::new(f64::from_le_bytes(word(2)), f64::from_le_bytes(word(3)));
    let cell = f64::from_le_bytes(word(4));
    let nx = u64::from_le_bytes(word(5)) as usize;
    let ny = u64::from_le_bytes(word(6)) as usize;
    let mass = f64::from_le_bytes(word(7));
    let grid = GridSpec::new(origin, cell, nx, ny)?;
    let mut body = vec![0u8; grid.len() * 8];
    r.read_exact(&mut body)
        .map_err(|e| Error::Format(format!("grid body: {e}")))?;
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((grid, mass, values))
}
