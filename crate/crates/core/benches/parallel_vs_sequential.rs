use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use coulomb2d::energy::{fourier_energy_with, hamiltonian_with, smooth_dipole, ParticleConfiguration};
use coulomb2d::equilibrium::{solve_thermal, CoulombOperator, ThermalOptions};
use coulomb2d::parallel::Execution;
use coulomb2d::rng::{stream, Purpose};
use coulomb2d::sampler::draw_from_density;
use coulomb2d::{GridSpec, PotentialSpec, Vec2};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn grid_potential(c: &mut Criterion) {
    let mut g = c.benchmark_group("grid_potential");
    for cells in [128, 256] {
        let grid = GridSpec::centered(3.0, cells).unwrap();
        let density: Vec<f64> = (0..grid.len()).map(|i| (-grid.center_of(i).norm2()).exp()).collect();
        for (name, exec) in MODES {
            let op = CoulombOperator::new(grid, exec);
            g.bench_with_input(BenchmarkId::new(name, cells), &density, |b, d| {
                b.iter(|| op.potential(black_box(d)))
            });
        }
    }
    g.finish();
}

fn fourier(c: &mut Criterion) {
    let mut g = c.benchmark_group("fourier_energy");
    let nu = smooth_dipole(GridSpec::centered(2.0, 256).unwrap(), Vec2::new(0.3, 0.1), 0.3).unwrap();
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| fourier_energy_with(exec, black_box(&nu)).unwrap()));
    }
    g.finish();
}

fn hamiltonian(c: &mut Criterion) {
    let mut g = c.benchmark_group("hamiltonian");
    let v = PotentialSpec::quadratic();
    let mu = solve_thermal(
        &v,
        4.0,
        GridSpec::centered(3.0, 64).unwrap(),
        &ThermalOptions::default(),
    )
    .unwrap();
    let mut rng = stream(1, Purpose::Init, 0);
    for n in [256, 2048] {
        let x = ParticleConfiguration::new(draw_from_density(&mu.mu_theta, n, &mut rng).unwrap()).unwrap();
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &x, |b, x| {
                b.iter(|| hamiltonian_with(exec, black_box(x), &v).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = grid_potential, fourier, hamiltonian
}
criterion_main!(benches);
