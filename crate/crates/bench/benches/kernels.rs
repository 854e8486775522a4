use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use qlasso_core::ensemble::{gen_sparse_signal, sample_measurements, EnsembleKind, SignalSpec};
use qlasso_core::geometry::{project_l1_ball, project_nuclear_ball};
use qlasso_core::quantizer::measure;
use qlasso_core::rng::seeded;
use qlasso_core::solver::glasso_solve;
use qlasso_core::{ConstraintSet, GLassoProblem, QuantizerConfig, SolverOptions};

fn gaussian_vector(n: usize, seed: u64) -> DVector<f64> {
    let row = sample_measurements(EnsembleKind::gaussian(), 1, n, &mut seeded(seed)).unwrap();
    row.row(0)
}

fn projections(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_l1_ball");
    for n in [100, 1000, 10_000] {
        let v = gaussian_vector(n, 1);
        let r = 0.1 * v.lp_norm(1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| project_l1_ball(black_box(v), r).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("project_nuclear_ball");
    for d in [5, 10, 20] {
        let v = gaussian_vector(d * d, 2);
        group.bench_with_input(BenchmarkId::from_parameter(d), &v, |b, v| {
            b.iter(|| project_nuclear_ball(black_box(v), 1.0).unwrap())
        });
    }
    group.finish();
}

fn measurement_and_solve(c: &mut Criterion) {
    let n = 100;
    let x0 = gen_sparse_signal(&SignalSpec::sparse(n, 25, 8.0, 3), &mut seeded(3)).unwrap();
    let q = QuantizerConfig::Uniform { delta: 3.0 };
    let k = ConstraintSet::L1Ball { radius: x0.lp_norm(1) };

    let mut group = c.benchmark_group("measure");
    for m in [200, 1000, 2000] {
        let a = sample_measurements(EnsembleKind::rademacher(), m, n, &mut seeded(4)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &a, |b, a| {
            let mut rng = seeded(5);
            b.iter(|| measure(a, black_box(&x0), &q, &q.default_dither(), &mut rng).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("glasso_solve");
    group.sample_size(20);
    for m in [200, 1000, 2000] {
        let a = sample_measurements(EnsembleKind::rademacher(), m, n, &mut seeded(4)).unwrap();
        let obs = measure(&a, &x0, &q, &q.default_dither(), &mut seeded(5)).unwrap();
        let p = GLassoProblem::from_observations(&a, &obs, 1.0, &k).unwrap();
        let opts = SolverOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(m), &p, |b, p| {
            b.iter(|| glasso_solve(black_box(p), &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projections, measurement_and_solve);
criterion_main!(benches);
