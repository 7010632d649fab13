//! Single-site Metropolis sampling of `P_{N,beta} ~ exp(-beta H_N)`.
//!
//! Each replica owns its state and a private random stream, so replicas can
//! run in any order or concurrently and still produce the same archives.

use crate::energy::{hamiltonian_with, ParticleConfiguration};
use crate::equilibrium::ThermalSolution;
use crate::error::{Error, Result};
use crate::geometry::{Region, Vec2};
use crate::grid::GridMeasure;
use crate::parallel::{self, Execution};
use crate::potential::PotentialSpec;
use crate::rng::{self, Purpose, StreamState};
use crate::stats::{self, TailCurve};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_AUDIT_EVERY: u64 = 10_000;
/// Largest tolerated relative gap between cached and recomputed energy.
pub const AUDIT_TOLERANCE: f64 = 1e-8;
pub const TARGET_ACCEPTANCE: (f64, f64) = (0.3, 0.5);

/// Parameters of one sampling run. `steps` counts single-particle proposals,
/// burn-in included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasConfig {
    pub n: usize,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_rule: Option<String>,
    pub potential: PotentialSpec,
    pub seed: u64,
    pub steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    /// Initial proposal standard deviation; derived from `mu_theta` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<f64>,
    #[serde(default = "default_audit_every")]
    pub audit_every: u64,
}

fn default_audit_every() -> u64 {
    DEFAULT_AUDIT_EVERY
}

/// Where `(N, beta)` sits relative to the intermediate-temperature regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRegime {
    pub theta: f64,
    /// `theta >= 4`, a finite-N proxy for `theta -> infinity`.
    pub theta_large: bool,
    /// `beta sqrt(N) log N`, which should be small.
    pub beta_sqrt_n_log_n: f64,
}

impl GasConfig {
    /// Defaults: burn-in `200 N` proposals, one frame every `10 N`.
    pub fn new(n: usize, beta: f64, potential: PotentialSpec, seed: u64, frames: u64) -> Self {
        let burn_in = 200 * n as u64;
        let thinning = 10 * n as u64;
        Self {
            n,
            beta,
            beta_rule: None,
            potential,
            seed,
            steps: burn_in + frames * thinning,
            burn_in,
            thinning,
            proposal_scale: None,
            audit_every: DEFAULT_AUDIT_EVERY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.thinning == 0 || self.audit_every == 0 {
            return bad("thinning and audit interval must be positive".into());
        }
        if self.steps < self.burn_in {
            return bad(format!("steps {} shorter than burn-in {}", self.steps, self.burn_in));
        }
        if let Some(s) = self.proposal_scale {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("proposal scale must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        self.beta * self.n as f64
    }

    pub fn regime(&self) -> TemperatureRegime {
        let n = self.n as f64;
        TemperatureRegime {
            theta: self.theta(),
            theta_large: self.theta() >= 4.0,
            beta_sqrt_n_log_n: self.beta * n.sqrt() * n.ln(),
        }
    }

    pub fn frame_count(&self) -> u64 {
        (self.steps - self.burn_in) / self.thinning
    }
}

/// `min(1, exp(-beta dH))`. Coincidences (`dH = +inf`) and NaN are rejected.
pub fn acceptance_probability(beta: f64, dh: f64) -> f64 {
    if dh.is_nan() || dh == f64::INFINITY {
        0.0
    } else if dh <= 0.0 {
        1.0
    } else {
        (-beta * dh).exp()
    }
}

/// `sum of ln r` over a few values, through one log when the product is safe.
#[inline]
fn log_product(r: &[f64]) -> f64 {
    let p: f64 = r.iter().product();
    if p.is_normal() {
        p.ln()
    } else {
        r.iter().map(|v| v.ln()).sum()
    }
}

const LOG_CHUNK: usize = 32;
const LANES: usize = 8;

/// `sum_j ln(|p - x_j|^2 / |q - x_j|^2)`, or `None` if `p` hits some `x_j`.
///
/// Squared distances are multiplied in independent lanes so a whole chunk
/// costs one logarithm; chunks whose products leave the normal range fall
/// back to per-term logs.
fn log_ratio_sum(xs: &[Vec2], p: Vec2, q: Vec2) -> Option<f64> {
    let mut acc = 0.0;
    let mut chunks = xs.chunks_exact(LOG_CHUNK);
    for c in &mut chunks {
        let mut pn = [1.0; LANES];
        let mut pd = [1.0; LANES];
        for b in c.chunks_exact(LANES) {
            for l in 0..LANES {
                pn[l] *= (p - b[l]).norm2();
                pd[l] *= (q - b[l]).norm2();
            }
        }
        let mut ratio = 1.0;
        for l in 0..LANES {
            ratio *= pn[l] / pd[l];
        }
        if ratio.is_normal() && pn.iter().chain(&pd).all(|v| v.is_normal()) {
            acc += ratio.ln();
        } else {
            for x in c {
                let rn = (p - *x).norm2();
                if rn == 0.0 {
                    return None;
                }
                acc += rn.ln() - (q - *x).norm2().ln();
            }
        }
    }
    for x in chunks.remainder() {
        let rn = (p - *x).norm2();
        if rn == 0.0 {
            return None;
        }
        acc += (rn / (q - *x).norm2()).ln();
    }
    Some(acc)
}

/// `H_N(x with x_i -> proposal) - H_N(x)` in `O(N)`, or `+inf` when the
/// proposal lands on another particle.
pub fn delta_energy(x: &[Vec2], v: &PotentialSpec, i: usize, proposal: Vec2) -> f64 {
    let xi = x[i];
    if proposal == xi {
        return 0.0;
    }
    let (Some(a), Some(b)) = (
        log_ratio_sum(&x[..i], proposal, xi),
        log_ratio_sum(&x[i + 1..], proposal, xi),
    ) else {
        return f64::INFINITY;
    };
    let n = x.len() as f64;
    -0.5 * (a + b) + n * (v.evaluate(proposal) - v.evaluate(xi))
}

/// `sum_j ln |p - x_j|^2`, batched like [`log_ratio_sum`].
fn log_dist_sum(xs: &[Vec2], p: Vec2) -> Option<f64> {
    let mut acc = 0.0;
    let mut chunks = xs.chunks_exact(LOG_CHUNK);
    for c in &mut chunks {
        let mut pn = [1.0; LANES];
        for b in c.chunks_exact(LANES) {
            for l in 0..LANES {
                pn[l] *= (p - b[l]).norm2();
            }
        }
        if pn.iter().all(|v| v.is_normal()) {
            acc += log_product(&pn);
        } else {
            for x in c {
                let r2 = (p - *x).norm2();
                if r2 == 0.0 {
                    return None;
                }
                acc += r2.ln();
            }
        }
    }
    for x in chunks.remainder() {
        let r2 = (p - *x).norm2();
        if r2 == 0.0 {
            return None;
        }
        acc += r2.ln();
    }
    Some(acc)
}

/// `H_N` with the pair logs batched like [`delta_energy`]; used by the audits.
pub fn audit_energy(x: &[Vec2], v: &PotentialSpec) -> Result<f64> {
    let mut log_r2 = 0.0;
    for (i, xi) in x.iter().enumerate() {
        log_r2 += log_dist_sum(&x[i + 1..], *xi)
            .ok_or_else(|| Error::Singularity(format!("particle {i} coincides with a later one")))?;
    }
    let n = x.len() as f64;
    Ok(-0.5 * log_r2 + n * x.iter().map(|p| v.evaluate(*p)).sum::<f64>())
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: ParticleConfiguration,
    /// Cached `H_N(config)`.
    pub energy: f64,
    pub accepts: u64,
    pub proposals: u64,
    pub rng: ChaCha8Rng,
    pub beta: f64,
    pub scale: f64,
    pub potential: PotentialSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub particle: usize,
    pub delta: f64,
    pub accepted: bool,
    /// The proposal hit another particle exactly.
    pub coincidence: bool,
}

impl ChainState {
    pub fn new(
        config: ParticleConfiguration,
        potential: PotentialSpec,
        beta: f64,
        scale: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if config.n() == 0 {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        let energy = hamiltonian_with(Execution::Sequential, &config, &potential)?;
        Ok(Self {
            config,
            energy,
            accepts: 0,
            proposals: 0,
            rng,
            beta,
            scale,
            potential,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }

    /// Recompute `H_N`, reset the cache, and return the relative drift.
    pub fn audit(&mut self) -> Result<f64> {
        let exact = audit_energy(&self.config.positions, &self.potential)?;
        let drift = (self.energy - exact).abs() / exact.abs().max(1.0);
        self.energy = exact;
        Ok(drift)
    }
}

/// One proposal: a uniformly chosen particle moves by a centred Gaussian of
/// standard deviation `state.scale` per coordinate.
pub fn metropolis_step(state: &mut ChainState) -> Step {
    let n = state.config.n();
    let i = state.rng.random_range(0..n);
    let dx: f64 = state.rng.sample(StandardNormal);
    let dy: f64 = state.rng.sample(StandardNormal);
    let u: f64 = state.rng.random();
    let proposal = state.config.positions[i] + Vec2::new(dx, dy) * state.scale;
    let delta = delta_energy(&state.config.positions, &state.potential, i, proposal);
    let accepted = u < acceptance_probability(state.beta, delta);
    state.proposals += 1;
    if accepted {
        state.config.positions[i] = proposal;
        state.energy += delta;
        state.accepts += 1;
    }
    Step {
        particle: i,
        delta,
        accepted,
        coincidence: delta == f64::INFINITY,
    }
}

/// `n` iid points from a cell density: a cell by inverse CDF, then a
/// uniform point inside it.
pub fn draw_from_density<R: Rng>(mu: &GridMeasure, n: usize, rng: &mut R) -> Result<Vec<Vec2>> {
    let grid = mu.grid;
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for d in &mu.density {
        acc += d.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return Err(Error::InvalidParameter("density has no positive mass".into()));
    }
    let h = grid.cell;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cdf.partition_point(|&c| c <= u).min(grid.len() - 1);
            let (jx, jy): (f64, f64) = (rng.random(), rng.random());
            grid.center_of(idx) + Vec2::new((jx - 0.5) * h, (jy - 0.5) * h)
        })
        .collect())
}

/// Standard deviation of one coordinate under `mu`, a starting proposal scale.
fn spread(mu: &GridMeasure) -> f64 {
    let grid = mu.grid;
    let a = grid.cell_area();
    let mut m = Vec2::ZERO;
    let mut s2 = 0.0;
    for (i, d) in mu.density.iter().enumerate() {
        let p = grid.center_of(i);
        m += p * (d * a);
        s2 += d * a * p.norm2();
    }
    ((s2 - m.norm2()) / 2.0).max(grid.cell * grid.cell).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub config: GasConfig,
    pub replica: u64,
    pub regime: TemperatureRegime,
    pub n: usize,
    pub frames: u64,
    pub initial_scale: f64,
    /// Frozen scale used after burn-in.
    pub proposal_scale: f64,
    pub burn_in_acceptance: f64,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    pub audits: u64,
    pub max_audit_drift: f64,
    /// `H_N` at every frame.
    pub frame_energies: Vec<f64>,
    /// Integrated autocorrelation time of `H_N`, in frames.
    pub energy_autocorrelation_frames: f64,
    pub final_rng: StreamState,
}

/// Header plus thinned frames, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleArchive {
    pub header: ArchiveHeader,
    positions: Vec<Vec2>,
}

impl SampleArchive {
    pub fn new(header: ArchiveHeader, positions: Vec<Vec2>) -> Result<Self> {
        if positions.len() as u64 != header.frames * header.n as u64 {
            return Err(Error::Format(format!(
                "{} positions for {} frames of {} particles",
                positions.len(),
                header.frames,
                header.n
            )));
        }
        Ok(Self { header, positions })
    }

    pub fn n(&self) -> usize {
        self.header.n
    }

    pub fn frame_count(&self) -> usize {
        self.header.frames as usize
    }

    pub fn frame(&self, k: usize) -> &[Vec2] {
        let n = self.header.n;
        &self.positions[k * n..(k + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Vec2]> {
        self.positions.chunks(self.header.n.max(1)).take(self.frame_count())
    }

    /// `u64` LE header length, the JSON header, then `(x, y)` pairs as LE `f64`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(16 * self.positions.len());
        for p in &self.positions {
            buf.extend_from_slice(&p.x.to_le_bytes());
            buf.extend_from_slice(&p.y.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 32 {
            return Err(Error::Format(format!("archive header length {len} is implausible")));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)?;
        let header: ArchiveHeader = serde_json::from_slice(&header)?;
        if header.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "archive format version {} (expected {ARCHIVE_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let expected = header.frames as usize * header.n * 16;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "archive body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8-byte slice"));
        let positions = body
            .chunks_exact(16)
            .map(|c| Vec2::new(f(&c[..8]), f(&c[8..])))
            .collect();
        Self::new(header, positions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Runs one replica: iid start from `mu_theta`, scale adaptation during
/// burn-in, then a frozen scale and a frame every `thinning` proposals.
pub fn run_chain(cfg: &GasConfig, mu: &ThermalSolution, replica: u64) -> Result<SampleArchive> {
    cfg.validate()?;
    let theta = cfg.theta();
    if (mu.theta - theta).abs() > 1e-9 * theta.max(1.0) {
        return Err(Error::Precondition(format!(
            "mu_theta was solved for theta = {}, the run needs {theta}",
            mu.theta
        )));
    }
    let mut init_rng = rng::stream(cfg.seed, Purpose::Init, replica);
    let start = draw_from_density(&mu.mu_theta, cfg.n, &mut init_rng)?;
    let initial_scale = cfg.proposal_scale.unwrap_or_else(|| 0.5 * spread(&mu.mu_theta));
    let mut state = ChainState::new(
        ParticleConfiguration::new(start)?,
        cfg.potential.clone(),
        cfg.beta,
        initial_scale,
        rng::stream(cfg.seed, Purpose::Chain, replica),
    )?;

    let window = (cfg.n as u64).max(100);
    let (lo, hi) = TARGET_ACCEPTANCE;
    let target = 0.5 * (lo + hi);
    let mut window_accepts = 0u64;
    let mut burn_accepts = 0u64;
    let frames = cfg.frame_count();
    let mut positions = Vec::with_capacity(frames as usize * cfg.n);
    let mut frame_energies = Vec::with_capacity(frames as usize);
    let mut audits = 0u64;
    let mut max_drift: f64 = 0.0;

    for step in 1..=cfg.steps {
        let s = metropolis_step(&mut state);
        if !state.energy.is_finite() {
            return Err(Error::NanEnergy { replica, step });
        }
        if step <= cfg.burn_in {
            if s.accepted {
                window_accepts += 1;
                burn_accepts += 1;
            }
            if step % window == 0 {
                let rate = window_accepts as f64 / window as f64;
                if !(lo..=hi).contains(&rate) {
                    state.scale *= (2.0 * (rate - target)).exp();
                }
                window_accepts = 0;
            }
            if step == cfg.burn_in {
                state.accepts = 0;
                state.proposals = 0;
            }
        }
        if step % cfg.audit_every == 0 {
            let drift = state.audit()?;
            audits += 1;
            max_drift = max_drift.max(drift);
            if drift > AUDIT_TOLERANCE {
                return Err(Error::EnergyDrift { step, relative: drift });
            }
        }
        if step > cfg.burn_in
            && (step - cfg.burn_in).is_multiple_of(cfg.thinning)
            && (frame_energies.len() as u64) < frames
        {
            positions.extend_from_slice(&state.config.positions);
            frame_energies.push(state.energy);
        }
    }

    let header = ArchiveHeader {
        format_version: ARCHIVE_FORMAT_VERSION,
        config: cfg.clone(),
        replica,
        regime: cfg.regime(),
        n: cfg.n,
        frames,
        initial_scale,
        proposal_scale: state.scale,
        burn_in_acceptance: if cfg.burn_in == 0 {
            0.0
        } else {
            burn_accepts as f64 / cfg.burn_in as f64
        },
        acceptance: state.acceptance_rate(),
        audits,
        max_audit_drift: max_drift,
        energy_autocorrelation_frames: stats::integrated_autocorrelation(&frame_energies),
        frame_energies,
        final_rng: rng::snapshot(&state.rng, cfg.seed, Purpose::Chain, replica),
    };
    SampleArchive::new(header, positions)
}

/// Replicas `0..replicas`, run concurrently under `exec`.
pub fn run_replicas(
    cfg: &GasConfig,
    mu: &ThermalSolution,
    replicas: u64,
    exec: Execution,
) -> Result<Vec<SampleArchive>> {
    parallel::map_collect(exec, 0..replicas as usize, |r| run_chain(cfg, mu, r as u64))
        .into_iter()
        .collect()
}

/// `Q >= C_hat (1/beta + N R^2)`, the range where the overcrowding bound
/// is claimed.
pub fn overcrowding_floor(beta: f64, n: usize, r: f64, c_hat: f64) -> f64 {
    c_hat * (1.0 / beta + n as f64 * r * r)
}

/// Empirical `P(#{x_i in B_R(x)} >= Q)` against `exp(-beta Q^2 / 2)`,
/// asserted for `Q >= q_floor`.
pub fn overcrowding_stat(
    archives: &[SampleArchive],
    x: Vec2,
    r: f64,
    q_grid: &[f64],
    q_floor: f64,
) -> Result<TailCurve> {
    let first = archives
        .first()
        .ok_or_else(|| Error::InvalidParameter("no archives".into()))?;
    let n = first.n();
    let beta = first.header.config.beta;
    if r < (n as f64).powf(-0.5) {
        return Err(Error::Precondition(format!("R = {r} is below N^(-1/2)")));
    }
    let r2 = r * r;
    let counts: Vec<f64> = archives
        .iter()
        .flat_map(|a| a.frames())
        .map(|f| f.iter().filter(|p| (**p - x).norm2() <= r2).count() as f64)
        .collect();
    TailCurve::from_values(&counts, q_grid, |q| (-0.5 * beta * q * q).exp(), |q| q >= q_floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinementStat {
    pub frames: usize,
    pub escapes: usize,
    pub empirical: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `N mu_theta(U^c)`.
    pub bound: f64,
}

impl ConfinementStat {
    /// `empirical <= slack (bound + 3 sigma)`, `sigma` the binomial error.
    pub fn passes(&self, slack: f64) -> bool {
        let p = self.empirical;
        let sigma = (p * (1.0 - p) / self.frames.max(1) as f64).sqrt();
        p <= slack * (self.bound + 3.0 * sigma)
    }
}

/// Fraction of frames with a particle outside `u`, paired with
/// `N mu_theta(U^c)` summed over grid cells whose centre lies outside `u`.
pub fn confinement_stat(archives: &[SampleArchive], u: &Region, mu: &ThermalSolution) -> Result<ConfinementStat> {
    let first = archives
        .first()
        .ok_or_else(|| Error::InvalidParameter("no archives".into()))?;
    let n = first.n();
    let mut frames = 0;
    let mut escapes = 0;
    for f in archives.iter().flat_map(|a| a.frames()) {
        frames += 1;
        if f.iter().any(|p| !u.contains(*p)) {
            escapes += 1;
        }
    }
    let (ci_lo, ci_hi) = stats::wilson_interval(escapes, frames, stats::Z_99);
    Ok(ConfinementStat {
        frames,
        escapes,
        empirical: escapes as f64 / frames.max(1) as f64,
        ci_lo,
        ci_hi,
        bound: n as f64 * mu.mu_theta.mass_where(|p| !u.contains(p)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::hamiltonian;

    #[test]
    fn acceptance_rule_is_metropolis() {
        assert_eq!(acceptance_probability(0.0, 123.0), 1.0);
        assert_eq!(acceptance_probability(2.0, 0.0), 1.0);
        assert_eq!(acceptance_probability(2.0, -1.0), 1.0);
        assert_eq!(acceptance_probability(2.0, f64::INFINITY), 0.0);
        assert!((acceptance_probability(0.5, 3.0) - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn delta_matches_full_recompute() {
        let v = PotentialSpec::quadratic();
        let mut r = rng::stream(3, Purpose::Verify, 0);
        let xs: Vec<Vec2> = (0..37).map(|_| Vec2::new(r.random(), r.random())).collect();
        let before = hamiltonian(&ParticleConfiguration::new(xs.clone()).unwrap(), &v).unwrap();
        for i in [0, 5, 36] {
            let p = Vec2::new(r.random(), r.random());
            let mut ys = xs.clone();
            ys[i] = p;
            let after = hamiltonian(&ParticleConfiguration::new(ys).unwrap(), &v).unwrap();
            let d = delta_energy(&xs, &v, i, p);
            assert!((d - (after - before)).abs() < 1e-9, "{d} vs {}", after - before);
        }
        assert_eq!(delta_energy(&xs, &v, 3, xs[3]), 0.0);
        assert_eq!(delta_energy(&xs, &v, 3, xs[4]), f64::INFINITY);
        let audit = audit_energy(&xs, &v).unwrap();
        assert!((audit - before).abs() < 1e-10 * before.abs());
    }
}
