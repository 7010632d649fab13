use coulomb2d::energy::*;
use coulomb2d::equilibrium::*;
use coulomb2d::kernel::SmearingRadius;
use coulomb2d::rng::{stream, Purpose};
use coulomb2d::sampler::draw_from_density;
use coulomb2d::*;

fn unit_disk(cells: usize) -> GridMeasure {
    let grid = GridSpec::centered(1.05, cells).unwrap();
    GridMeasure::normalized_from_fn(grid, |p| if p.norm() <= 1.0 { 1.0 } else { 0.0 }).unwrap()
}

#[test]
fn uniform_disk_energy() {
    // 1/2 of the double integral -log|x - y| over the unit disk, which is 1/4.
    let mu = unit_disk(256);
    let r = mean_field_energy(&mu, &PotentialSpec::quadratic(), None).unwrap();
    assert!((r.breakdown.pair - 0.125).abs() < 2e-3, "{}", r.breakdown.pair);
    // int |x|^2 over the uniform unit disk.
    assert!((r.breakdown.confinement - 0.5).abs() < 1e-2);
    assert_eq!(r.breakdown.entropy, 0.0);
    let json = serde_json::to_value(r).unwrap();
    for k in ["pair", "confinement", "cross", "background", "entropy"] {
        assert!(json["breakdown"][k].is_number());
    }
}

#[test]
fn energy_is_translation_invariant_and_quadratic() {
    let mu = unit_disk(128);
    let op = EnergyOperator::new(mu.grid, Default::default());
    let e = op.energy(&mu.density);
    let g = mu.grid;
    let shifted = GridMeasure::new(g.shifted(7, -3), mu.density.clone()).unwrap();
    let op2 = EnergyOperator::new(shifted.grid, Default::default());
    assert!((op2.energy(&shifted.density) - e).abs() < 1e-12);
    let doubled: Vec<f64> = mu.density.iter().map(|d| 2.0 * d).collect();
    assert!((op.energy(&doubled) - 4.0 * e).abs() < 1e-12 * e.abs());
}

#[test]
fn single_particle_next_order() {
    let mu = unit_disk(128);
    let x = ParticleConfiguration::new(vec![Vec2::new(0.2, 0.1)]).unwrap();
    let f = next_order_energy(&x, &mu).unwrap();
    let e = EnergyOperator::new(mu.grid, Default::default()).energy(&mu.density);
    let expected = e - grid_potential(&mu, x.positions[0]);
    assert!((f - expected).abs() < 1e-9, "{f} vs {expected}");
}

#[test]
fn fourier_energy_is_quadratic_and_zero_on_zero() {
    let grid = GridSpec::centered(2.0, 128).unwrap();
    let nu = smooth_dipole(grid, Vec2::new(0.3, 0.1), 0.3).unwrap();
    let e = fourier_energy(&nu).unwrap();
    assert!(e > 0.0);
    assert!((fourier_energy(&nu.scaled(2.0)).unwrap() - 4.0 * e).abs() < 1e-10 * e);
    let zero = SignedGridMeasure::new(grid, vec![0.0; grid.len()]).unwrap();
    assert_eq!(fourier_energy(&zero).unwrap(), 0.0);
    let r = signed_energy(&nu);
    assert!(((e - r) / r).abs() < 1e-4);
}

fn thermal(v: &PotentialSpec) -> ThermalSolution {
    solve_thermal(v, 2.0, GridSpec::centered(3.5, 64).unwrap(), &ThermalOptions::default()).unwrap()
}

#[test]
fn splitting_residual_ignores_constant_shift() {
    let v = PotentialSpec::quadratic();
    let w = v.shifted(1.5);
    let (a, b) = (thermal(&v), thermal(&w));
    let mut rng = stream(1, Purpose::Verify, 0);
    let x = ParticleConfiguration::new(draw_from_density(&a.mu_theta, 40, &mut rng).unwrap()).unwrap();
    let ra = splitting_terms(Default::default(), &x, &v, &a).unwrap();
    let rb = splitting_terms(Default::default(), &x, &w, &b).unwrap();
    assert!((ra.residual() - rb.residual()).abs() < 1e-8 * ra.hamiltonian.abs());
    assert!(ra.relative() < 0.05, "{}", ra.relative());
}

#[test]
fn smeared_fluctuation_is_neutral() {
    let sol = thermal(&PotentialSpec::quadratic());
    let mut rng = stream(2, Purpose::Verify, 0);
    let x = ParticleConfiguration::new(draw_from_density(&sol.mu_theta, 50, &mut rng).unwrap()).unwrap();
    let nu = smear_fluctuation(&x, &sol.mu_theta, SmearingRadius::new(0.3).unwrap()).unwrap();
    assert!(nu.total_mass.abs() < 1e-8, "{}", nu.total_mass);
}

#[test]
fn regularization_holds_on_sampled_configurations() {
    let sol = thermal(&PotentialSpec::quadratic());
    let n = 64;
    let eta = SmearingRadius::new(0.1 / (n as f64).sqrt()).unwrap();
    let corr = SmoothingCorrection::new(Default::default(), &sol.mu_theta, eta, C_HAT_DEFAULT).unwrap();
    let mut rng = stream(3, Purpose::Verify, 0);
    for _ in 0..10 {
        let x = ParticleConfiguration::new(draw_from_density(&sol.mu_theta, n, &mut rng).unwrap()).unwrap();
        let g = corr.regularization_gap(&x).unwrap();
        assert!(g.holds(), "{g:?}");
        assert!(g.pair <= 0.0);
    }
}

#[test]
fn smoothing_difference_signs() {
    let sol = thermal(&PotentialSpec::quadratic());
    let eta = 0.05;
    let corr = SmoothingCorrection::new(
        Default::default(),
        &sol.mu_theta,
        SmearingRadius::new(eta).unwrap(),
        C_HAT_DEFAULT,
    )
    .unwrap();
    let y = Vec2::new(0.1, 0.2);
    let x = ParticleConfiguration::new(vec![Vec2::new(2.0, 2.0), Vec2::new(-1.5, 1.0)]).unwrap();
    let far = corr.smoothing_difference(&x, y).unwrap();
    assert!(far.abs() < 10.0 * sol.mu_theta.sup() * eta * eta, "{far}");
    assert!(far >= corr.smoothing_floor(), "{far} {}", corr.smoothing_floor());
    let near = ParticleConfiguration::new(vec![y + Vec2::new(0.5 * eta, 0.0), Vec2::new(-1.5, 1.0)]).unwrap();
    assert!(corr.smoothing_difference(&near, y).unwrap() > 0.1);
}

#[test]
fn min_energy_floor_is_positive() {
    let fam = min_energy_family().unwrap();
    assert_eq!(fam.len(), 20);
    for c in &fam {
        let r = min_energy_check(&c.nu, c.eta, c.delta).unwrap();
        assert!(r.rhs_ratio > 0.001, "{}: {}", c.label, r.rhs_ratio);
    }
}
