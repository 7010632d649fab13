use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use coulomb2d::analysis::{analyze, AnalysisReport, Check};
use coulomb2d::config::RunConfig;
use coulomb2d::energy::{mean_field_energy, EnergyReport};
use coulomb2d::equilibrium::{
    default_grid, solve_equilibrium, solve_thermal, thermal_from_saved, EquilibriumOptions, MeasureSidecar,
    ThermalOptions, ThermalSolution,
};
use coulomb2d::parallel::{env_thread_cap, Execution};
use coulomb2d::sampler::{run_replicas, SampleArchive};
use coulomb2d::verify::{run_verify, VerifyConfig, VerifyReport};
use coulomb2d::{GridMeasure, GridSpec, PotentialSpec};

use crate::exit::{self, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{AnalyzeArgs, Cli, Command, ReportArgs, SampleArgs, VerifyArgs};

pub const MU_THETA: &str = "mu_theta.bin";
pub const MU_V: &str = "mu_v.bin";
pub const ANALYSIS_REPORT: &str = "analysis_report.json";
pub const VERIFY_REPORT: &str = "verify_report.json";
pub const EQUILIBRIUM_REPORT: &str = "equilibrium_report.json";

/// Cells per side for the `mu_V` solve that supplies the limiting intensity.
const MU_V_CELLS: usize = 256;
/// Grid half-width for that solve, in units of the predicted support radius.
const MU_V_MARGIN: f64 = 2.0;

pub fn run(cli: &Cli) -> CliResult<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Equilibrium => equilibrium(cli),
        Command::Sample(a) => sample(cli, a),
        Command::Analyze(a) => analyze_cmd(cli, a),
        Command::Verify(a) => verify(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn threads(cli: &Cli) -> Option<usize> {
    match (cli.threads, env_thread_cap()) {
        (Some(t), Some(c)) => Some(t.min(c)),
        (t, c) => t.or(c),
    }
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    if !path.exists() {
        return Err(CliError::missing("config", path));
    }
    RunConfig::load(path).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn required_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::usage("this command needs --config"))?;
    let mut cfg = load_config(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// `foo.bin` -> `foo.json`.
pub fn sidecar_path(measure: &Path) -> PathBuf {
    measure.with_extension("json")
}

fn save_measure(mu: &GridMeasure, sidecar: &MeasureSidecar, path: &Path, m: &mut RunManifest) -> CliResult<()> {
    mu.save(path).map_err(|e| CliError::stage("writing measure", e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(sidecar)?)?;
    m.output(path)?;
    m.output(&side)?;
    Ok(())
}

fn load_thermal(path: &Path) -> CliResult<(ThermalSolution, MeasureSidecar)> {
    let side = sidecar_path(path);
    if !path.exists() {
        return Err(CliError::missing("mu_theta", path));
    }
    if !side.exists() {
        return Err(CliError::missing("mu_theta sidecar", &side));
    }
    let sidecar: MeasureSidecar = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| CliError::usage(format!("invalid sidecar {}: {e}", side.display())))?;
    let mu =
        GridMeasure::load(path).map_err(|e| CliError::usage(format!("invalid measure {}: {e}", path.display())))?;
    let sol = thermal_from_saved(mu, &sidecar).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((sol, sidecar))
}

fn mu_v_grid(v: &PotentialSpec) -> CliResult<GridSpec> {
    default_grid(v, MU_V_MARGIN, MU_V_CELLS).map_err(|e| CliError::stage("mu_V grid", e))
}

#[derive(Serialize)]
struct EquilibriumSummary {
    theta: f64,
    grid: GridSpec,
    thermal_residual: f64,
    thermal_iterations: usize,
    newton_steps: usize,
    krylov_iterations: usize,
    c_theta: f64,
    equilibrium_residual: f64,
    equilibrium_iterations: usize,
    c_v: f64,
    mu_v_at_z_bar: f64,
    mu_theta_at_z_bar: f64,
    /// Mean-field energy of `mu_theta`, entropy included.
    energy: EnergyReport,
}

fn equilibrium(cli: &Cli) -> CliResult<()> {
    let cfg = required_config(cli)?;
    let canonical = cfg.canonical_json();
    let mut m = RunManifest::start("equilibrium", &canonical, cfg.seed, threads(cli))?;
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    let v = &cfg.potential;
    let theta = cfg.theta().map_err(|e| CliError::stage("config", e))?;
    let grid = cfg.grid_spec().map_err(|e| CliError::stage("config", e))?;

    info!("solving mu_V on {}^2 cells", MU_V_CELLS);
    let eq = solve_equilibrium(v, mu_v_grid(v)?, &EquilibriumOptions::default())
        .map_err(|e| CliError::stage("equilibrium solver", e))?;
    info!("solving mu_theta at theta = {theta} on {}x{} cells", grid.nx, grid.ny);
    let opts = ThermalOptions::default();
    let th = solve_thermal(v, theta, grid, &opts).map_err(|e| CliError::stage("thermal solver", e))?;
    let energy = mean_field_energy(&th.mu_theta, v, Some(theta)).map_err(|e| CliError::stage("energy", e))?;

    let out = &cli.out_dir;
    save_measure(&eq.mu, &MeasureSidecar::equilibrium(v, &eq), &out.join(MU_V), &mut m)?;
    save_measure(
        &th.mu_theta,
        &MeasureSidecar::thermal(v, &th, &opts),
        &out.join(MU_THETA),
        &mut m,
    )?;
    let z = cfg.analysis.z_bar;
    let summary = EquilibriumSummary {
        theta,
        grid,
        thermal_residual: th.residual,
        thermal_iterations: th.iterations,
        newton_steps: th.newton_steps,
        krylov_iterations: th.krylov_iterations,
        c_theta: th.c_theta,
        equilibrium_residual: eq.residual,
        equilibrium_iterations: eq.iterations,
        c_v: eq.c_v,
        mu_v_at_z_bar: eq.mu.density_at(z),
        mu_theta_at_z_bar: th.density_at(z),
        energy,
    };
    let rp = out.join(EQUILIBRIUM_REPORT);
    fs::write(&rp, serde_json::to_string_pretty(&summary)?)?;
    m.output(&rp)?;
    m.check("thermal_residual", th.residual <= opts.tol.max(1e-6));
    m.finish(out)?;
    println!(
        "mu_theta: theta {theta}, EL residual {:.3e} after {} iterations ({} Newton)",
        th.residual, th.iterations, th.newton_steps
    );
    println!("mu_V: residual {:.3e} after {} iterations", eq.residual, eq.iterations);
    Ok(())
}

/// A configuration from `--config` with sample flags applied on top, or from
/// the flags alone.
fn sample_config(cli: &Cli, a: &SampleArgs) -> CliResult<RunConfig> {
    let mut value = match &cli.config {
        Some(p) => serde_json::to_value(load_config(p)?)?,
        None => {
            let n = a.n.ok_or_else(|| CliError::usage("sample needs --config or --n"))?;
            serde_json::json!({ "potential": PotentialSpec::quadratic(), "n": n })
        }
    };
    let obj = value.as_object_mut().expect("config is an object");
    if let Some(n) = a.n {
        obj.insert("n".into(), n.into());
    }
    if a.beta.is_some() || a.beta_rule.is_some() {
        for k in ["beta", "beta_rule", "theta"] {
            obj.remove(k);
        }
        if let Some(b) = a.beta {
            obj.insert("beta".into(), b.into());
        }
        if let Some(r) = &a.beta_rule {
            obj.insert("beta_rule".into(), r.clone().into());
        }
    }
    if let Some(s) = cli.seed {
        obj.insert("seed".into(), s.into());
    }
    let sampler = obj
        .entry("sampler")
        .or_insert_with(|| serde_json::json!({}))
        .as_object_mut()
        .expect("sampler block is an object");
    for (k, v) in [
        ("steps", a.steps),
        ("burn_in", a.burnin),
        ("thinning", a.thin),
        ("replicas", a.replicas),
    ] {
        if let Some(v) = v {
            sampler.insert(k.into(), v.into());
        }
    }
    RunConfig::from_json(&value.to_string()).map_err(|e| CliError::usage(format!("invalid sample settings: {e}")))
}

fn sample(cli: &Cli, a: &SampleArgs) -> CliResult<()> {
    let cfg = sample_config(cli, a)?;
    let gas = cfg.gas_config().map_err(|e| CliError::usage(e.to_string()))?;
    let canonical = cfg.canonical_json();
    let mut m = RunManifest::start("sample", &canonical, cfg.seed, threads(cli))?;
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    let theta = gas.theta();
    let mu_path = cli.out_dir.join(MU_THETA);
    let reuse = match load_thermal(&mu_path) {
        Ok((sol, side)) if side.potential == cfg.potential && (sol.theta - theta).abs() <= 1e-12 * theta => Some(sol),
        _ => None,
    };
    let mu = match reuse {
        Some(sol) => {
            info!("reusing {}", mu_path.display());
            m.input(&mu_path)?;
            sol
        }
        None => {
            info!("solving mu_theta at theta = {theta}");
            let opts = ThermalOptions::default();
            let grid = cfg.grid_spec().map_err(|e| CliError::stage("config", e))?;
            let sol =
                solve_thermal(&cfg.potential, theta, grid, &opts).map_err(|e| CliError::stage("thermal solver", e))?;
            save_measure(
                &sol.mu_theta,
                &MeasureSidecar::thermal(&cfg.potential, &sol, &opts),
                &mu_path,
                &mut m,
            )?;
            sol
        }
    };

    let replicas = cfg.sampler.replicas;
    info!(
        "sampling {replicas} replicas: N = {}, beta = {:.4e}, {} steps, burn-in {}, thinning {}",
        gas.n, gas.beta, gas.steps, gas.burn_in, gas.thinning
    );
    let archives =
        run_replicas(&gas, &mu, replicas, Execution::default()).map_err(|e| CliError::stage("sampler", e))?;
    let dir = a.out.clone().unwrap_or_else(|| cli.out_dir.join("archives"));
    fs::create_dir_all(&dir)?;
    for arc in &archives {
        let h = &arc.header;
        let path = dir.join(format!("replica_{:03}.archive", h.replica));
        arc.save(&path).map_err(|e| CliError::stage("writing archive", e))?;
        m.output(&path)?;
        let ok = (0.25..=0.55).contains(&h.acceptance);
        if !ok {
            warn!(
                "replica {}: acceptance {:.3} outside [0.25, 0.55]",
                h.replica, h.acceptance
            );
        }
        m.check(&format!("replica_{}_acceptance", h.replica), ok);
        println!(
            "replica {}: {} frames, acceptance {:.3}, scale {:.4}, max audit drift {:.1e}",
            h.replica, h.frames, h.acceptance, h.proposal_scale, h.max_audit_drift
        );
    }
    let cp = cli.out_dir.join("run_config.json");
    fs::write(&cp, &canonical)?;
    m.output(&cp)?;
    m.finish(&cli.out_dir)?;
    Ok(())
}

/// What `analyze` writes and `report` reads.
#[derive(Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub archives: Vec<PathBuf>,
    pub lambda_source: String,
    pub passes: bool,
    pub checks: Vec<Check>,
    pub report: AnalysisReport,
}

fn archive_paths(cli: &Cli, a: &AnalyzeArgs) -> CliResult<Vec<PathBuf>> {
    if !a.archives.is_empty() {
        return Ok(a.archives.clone());
    }
    let dir = cli.out_dir.join("archives");
    if !dir.is_dir() {
        return Err(CliError::missing("archive directory", &dir));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "archive"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::missing("archives", &dir));
    }
    Ok(paths)
}

fn analyze_cmd(cli: &Cli, a: &AnalyzeArgs) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let analysis = cfg.as_ref().map(|c| c.analysis.clone()).unwrap_or_default();
    let canonical = serde_json::to_string(&analysis)?;
    let paths = archive_paths(cli, a)?;
    let mu_path = a.mu.clone().unwrap_or_else(|| cli.out_dir.join(MU_THETA));
    let (mu, sidecar) = load_thermal(&mu_path)?;

    let mut archives = Vec::with_capacity(paths.len());
    for p in &paths {
        if !p.exists() {
            return Err(CliError::missing("archive", p));
        }
        archives.push(SampleArchive::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?);
    }
    let seed = archives[0].header.config.seed;
    let mut m = RunManifest::start("analyze", &canonical, seed, threads(cli))?;
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    m.input(&mu_path)?;
    m.input(&sidecar_path(&mu_path))?;
    for p in &paths {
        m.input(p)?;
    }

    let z = analysis.z_bar;
    let mu_v_path = mu_path.with_file_name(MU_V);
    let (lambda, lambda_source) = match a.lambda {
        Some(l) => (l, "command line".to_string()),
        None if mu_v_path.exists() => {
            m.input(&mu_v_path)?;
            let mv = GridMeasure::load(&mu_v_path).map_err(|e| CliError::usage(e.to_string()))?;
            (mv.density_at(z), mu_v_path.display().to_string())
        }
        None => {
            let v = &sidecar.potential;
            let eq = solve_equilibrium(v, mu_v_grid(v)?, &EquilibriumOptions::default())
                .map_err(|e| CliError::stage("equilibrium solver", e))?;
            (eq.mu.density_at(z), "equilibrium solve".to_string())
        }
    };
    info!(
        "analyzing {} archives, lambda = {lambda:.6} ({lambda_source})",
        archives.len()
    );
    let report = analyze(&archives, &mu, lambda, &analysis).map_err(|e| CliError::stage("analysis", e))?;
    let checks = report.checks();
    for c in &checks {
        m.check(&c.name, c.passed);
        println!(
            "{:<28} {}{}",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            if c.gating { "" } else { " (informational)" }
        );
    }
    let doc = AnalysisDocument {
        archives: paths,
        lambda_source,
        passes: report.passes(),
        checks,
        report,
    };
    let out = &cli.out_dir;
    let rp = out.join(ANALYSIS_REPORT);
    fs::write(&rp, serde_json::to_string_pretty(&doc)?)?;
    m.output(&rp)?;
    for (name, curve) in doc.report.curves() {
        let p = out.join(format!("{name}.csv"));
        fs::write(&p, curve.to_csv())?;
        m.output(&p)?;
    }
    m.finish(out)?;
    Ok(())
}

fn verify(cli: &Cli, a: &VerifyArgs) -> CliResult<()> {
    let (v, mut vc, seed) = match &cli.config {
        Some(p) => {
            let c = load_config(p)?;
            (c.potential, c.verify, c.seed)
        }
        None => (PotentialSpec::quadratic(), VerifyConfig::default(), 0),
    };
    let seed = cli.seed.unwrap_or(seed);
    if let Some(c) = a.cells {
        vc.cells = c;
    }
    let canonical = serde_json::to_string(&serde_json::json!({ "potential": v, "verify": vc }))?;
    let mut m = RunManifest::start("verify", &canonical, seed, threads(cli))?;
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    let r: VerifyReport = run_verify(&v, &vc, seed, Execution::default()).map_err(|e| match e {
        coulomb2d::Error::NonConvergence { .. } | coulomb2d::Error::SolverQuality(_) => CliError::stage("verify", e),
        e => CliError::new(exit::VERIFY, format!("verify: {e}")),
    })?;
    let rows = [
        (
            "splitting",
            r.splitting.passes,
            format!(
                "worst residual {:.2e}, refinement x{:.2}",
                r.splitting.worst_fine, r.splitting.refinement
            ),
        ),
        (
            "energy_oracle",
            r.oracle.passes,
            format!("worst relative error {:.2e}", r.oracle.worst),
        ),
        (
            "regularization",
            r.regularization.passes,
            format!(
                "{} violations of {}",
                r.regularization.violations, r.regularization.configs
            ),
        ),
        (
            "min_energy",
            r.min_energy.passes,
            format!("floor {:.6}, recorded {:.6}", r.min_energy.floor, r.min_energy.recorded),
        ),
    ];
    for (name, ok, detail) in &rows {
        m.check(name, *ok);
        println!("{name:<16} {} {detail}", if *ok { "pass" } else { "FAIL" });
    }
    let rp = cli.out_dir.join(VERIFY_REPORT);
    fs::write(&rp, serde_json::to_string_pretty(&r)?)?;
    m.output(&rp)?;
    m.finish(&cli.out_dir)?;
    if r.passes() {
        Ok(())
    } else {
        Err(CliError::new(exit::VERIFY, "identity checks failed"))
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> CliResult<()> {
    let inputs = if a.reports.is_empty() {
        vec![cli.out_dir.join(ANALYSIS_REPORT)]
    } else {
        a.reports.clone()
    };
    let dir = a.out.clone().unwrap_or_else(|| cli.out_dir.join("report"));
    fs::create_dir_all(&dir)?;
    let mut m = RunManifest::start("report", "{}", 0, threads(cli))?;
    let mut summary = String::from("report,check,passed,gating\n");
    for (i, p) in inputs.iter().enumerate() {
        if !p.exists() {
            return Err(CliError::missing("analysis report", p));
        }
        m.input(p)?;
        let doc: AnalysisDocument = serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::usage(format!("invalid analysis report {}: {e}", p.display())))?;
        let stem = if inputs.len() == 1 {
            String::new()
        } else {
            format!("{i:02}_")
        };
        for (name, curve) in doc.report.curves() {
            let out = dir.join(format!("{stem}{name}.csv"));
            fs::write(&out, curve.to_csv())?;
            m.output(&out)?;
        }
        for c in &doc.checks {
            summary.push_str(&format!("{},{},{},{}\n", p.display(), c.name, c.passed, c.gating));
        }
    }
    let sp = dir.join("checks.csv");
    fs::write(&sp, summary)?;
    m.output(&sp)?;
    m.finish(&dir)?;
    println!("wrote curves for {} report(s) to {}", inputs.len(), dir.display());
    Ok(())
}
