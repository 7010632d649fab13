use std::f64::consts::PI;

use coulomb2d::equilibrium::*;
use coulomb2d::rng::{stream, Purpose};
use coulomb2d::sampler::draw_from_density;
use coulomb2d::stats::*;
use coulomb2d::*;

fn thermal(theta: f64) -> ThermalSolution {
    let grid = GridSpec::centered(4.0, 64).unwrap();
    solve_thermal(&PotentialSpec::quadratic(), theta, grid, &ThermalOptions::default()).unwrap()
}

fn iid_frames(mu: &ThermalSolution, n: usize, frames: usize, seed: u64) -> Vec<Vec<Vec2>> {
    let mut rng = stream(seed, Purpose::Fixture, 0);
    (0..frames)
        .map(|_| draw_from_density(&mu.mu_theta, n, &mut rng).unwrap())
        .collect()
}

#[test]
fn poisson_null_is_calibrated() {
    let lambda = 2.0 / PI;
    let w = Window::unit();
    let mut rng = stream(11, Purpose::Fixture, 0);
    let p: Vec<f64> = (0..60)
        .map(|_| {
            let s = poisson_fixture(&mut rng, lambda, w, 2000).unwrap();
            poisson_count_test(&window_counts(&s, &w), lambda * w.area())
                .unwrap()
                .p_value
        })
        .collect();
    assert!(ks_uniform(&p).1 > 0.01);

    // A wrong intensity is rejected.
    let s = poisson_fixture(&mut rng, 1.2 * lambda, w, 4000).unwrap();
    assert!(poisson_count_test(&window_counts(&s, &w), lambda).unwrap().p_value < 1e-3);
}

#[test]
fn correlations_of_poisson() {
    let lambda = 0.8;
    let w = Window::centered(2.0);
    let mut rng = stream(12, Purpose::Fixture, 1);
    let groups: Vec<_> = (0..4)
        .map(|_| poisson_fixture(&mut rng, lambda, w, 500).unwrap())
        .collect();
    let bins = Bins {
        region: w,
        nx: 2,
        ny: 2,
    };
    let r1 = estimate_correlation(&groups, 1, bins).unwrap();
    for (v, e) in r1.values.iter().zip(&r1.std_err) {
        assert!((v - lambda).abs() < 4.0 * e, "{v} {e}");
    }
    // Ordered pairs make R2 symmetric under q - p -> p - q.
    let disp = Bins {
        region: Window::centered(1.0),
        nx: 4,
        ny: 4,
    };
    let r2 = estimate_correlation(&groups, 2, disp).unwrap();
    for b in 0..16 {
        let (ix, iy) = (b % 4, b / 4);
        let m = (3 - ix) + 4 * (3 - iy);
        assert!((r2.values[b] - r2.values[m]).abs() < 1e-12);
    }
    let few = vec![groups[0][..4].to_vec()];
    assert!(estimate_correlation(&few, 1, bins).is_err());
    assert!(estimate_correlation(&groups, 3, bins).is_err());
}

#[test]
fn laplace_functional_limits() {
    let w = Window::unit();
    let mut rng = stream(13, Purpose::Fixture, 2);
    let s = poisson_fixture(&mut rng, 1.0, w, 3000).unwrap();
    let zero = laplace_functional(&s, |_| 0.0, 1.0).unwrap();
    assert_eq!(zero.value, 1.0);
    assert_eq!(zero.reference, 1.0);
    let big = laplace_functional(&s, |_| 50.0, 1.0).unwrap();
    let empty = s.iter().filter(|f| f.points.is_empty()).count() as f64 / s.len() as f64;
    assert!((big.value - empty).abs() < 1e-12);
    assert!(big.agrees(3.0), "{big:?}");
    assert!(laplace_functional(&s, |_| -1.0, 1.0).is_err());
}

#[test]
fn local_process_rescales() {
    let x = vec![
        Vec2::new(0.1, 0.0),
        Vec2::new(0.0, -0.05),
        Vec2::new(3.0, 3.0),
        Vec2::ZERO,
    ];
    let s = local_process(&x, Vec2::ZERO, Window::centered(1.0));
    // Scale sqrt(4) = 2.
    assert_eq!(s.points, vec![Vec2::new(0.2, 0.0), Vec2::new(0.0, -0.1), Vec2::ZERO]);
    assert_eq!(s.n_source, 4);
}

#[test]
fn one_point_ratio_of_exact_draws() {
    let mu = thermal(4.0);
    let frames = iid_frames(&mu, 100, 400, 14);
    let groups: Vec<Vec<&[Vec2]>> = frames
        .chunks(50)
        .map(|c| c.iter().map(|f| f.as_slice()).collect())
        .collect();
    let r = one_point_ratio(&groups, &mu, bulk_bins(Vec2::ZERO, 0.8, 3).unwrap(), 0.04, 0.0, 0.0).unwrap();
    assert!(r.passes(), "{r:?}");
    assert!(r.sup_deviation < 0.1);
}

#[test]
fn linear_statistic_properties() {
    let mu = thermal(4.0);
    let frames = iid_frames(&mu, 100, 200, 15);
    let f = || frames.iter().map(|f| f.as_slice());
    let c = linear_statistic(f(), &mu, 0.04, |_| 3.0, 1.0).unwrap();
    assert!(c.mean.abs() < 1e-9 && c.variance < 1e-18);
    assert_eq!(c.log_moment, 0.0);
    let a = linear_statistic(f(), &mu, 0.04, |p| p.x, 1.0).unwrap();
    let b = linear_statistic(f(), &mu, 0.04, |p| 2.0 * p.x, 1.0).unwrap();
    assert!((b.mean - 2.0 * a.mean).abs() < 1e-9);
    assert!((b.variance - 4.0 * a.variance).abs() < 1e-9 * b.variance);
    // For iid draws Var Fluct = N Var phi, which is about N E x^2.
    let ex2: f64 = frames.iter().flatten().map(|p| p.x * p.x).sum::<f64>() / (100.0 * 200.0);
    assert!(
        (a.variance / (100.0 * ex2) - 1.0).abs() < 0.3,
        "{} vs {}",
        a.variance,
        100.0 * ex2
    );
}

#[test]
fn weighted_moments_at_trivial_parameters() {
    let mu = thermal(4.0);
    let frames = iid_frames(&mu, 100, 50, 16);
    let f = || frames.iter().map(|f| f.as_slice());
    let m = thermal_weight_moment(f(), &mu, 0.04, 0.0, 10.0).unwrap();
    assert_eq!(m.moment.log_mean, 0.0);
    assert!(m.passes);
    assert!(smoothing_moment_check(f(), &mu, 0.04, Vec2::ZERO, 2.0, 0.05, 10.0).is_err());
    assert!(smoothing_moment_check(f(), &mu, 0.04, Vec2::ZERO, 1.0, 5.0, 10.0).is_err());
    let s = smoothing_moment_check(f(), &mu, 0.04, Vec2::ZERO, 1.0, 0.05, 10.0).unwrap();
    assert!(s.passes, "{s:?}");
}

#[test]
fn tail_curves() {
    let values: Vec<f64> = (0..100).map(f64::from).collect();
    let c = TailCurve::from_values(&values, &[0.0, 50.0, 99.0, 200.0], |_| 0.5, |t| t >= 99.0).unwrap();
    assert_eq!(c.empirical, vec![1.0, 0.5, 0.01, 0.0]);
    assert!(c.passes());
    let strict = TailCurve::from_values(&values, &[0.0, 50.0], |_| 0.01, |_| true).unwrap();
    assert_eq!(strict.violations(), vec![0.0, 50.0]);
    assert!(TailCurve::from_values(&values, &[2.0, 1.0], |_| 0.0, |_| true).is_err());
    assert!(c.to_csv().starts_with("threshold,empirical,ci_lo,ci_hi,bound\n"));
}

#[test]
fn fluctuation_potential_vanishes_far_away() {
    let mu = thermal(4.0);
    let x = &iid_frames(&mu, 200, 1, 17)[0];
    let near = fluct_potential(x, &mu, Vec2::new(0.05, 0.02)).unwrap().abs();
    let far = fluct_potential(x, &mu, Vec2::new(300.0, 0.0)).unwrap().abs();
    // Neutral charge: the far field is a dipole decaying like 1/|y|.
    assert!(far < 1e-2, "{far}");
    assert!(far < near);
}
