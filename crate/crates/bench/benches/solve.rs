use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stopline::pde::{solve_scalar, LinearSolver};
use stopline::SolverSettings;
use stopline_bench::{bump_grid, bump_model, put_model};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_scalar");
    group.sample_size(10);
    let bump = bump_model();
    for n in [400, 1600] {
        group.bench_with_input(BenchmarkId::new("bump", n), &n, |b, &n| {
            let settings = bump_grid(n);
            b.iter(|| black_box(solve_scalar(&bump, &settings).unwrap()))
        });
    }
    let put = put_model();
    for (name, solver) in [("howard", LinearSolver::PolicyIteration), ("psor", LinearSolver::Psor)] {
        let settings = SolverSettings {
            linear_solver: solver,
            ..SolverSettings::on(1e-3, 4.0, 800)
        };
        group.bench_function(BenchmarkId::new("put", name), |b| {
            b.iter(|| black_box(solve_scalar(&put, &settings).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_solve);
criterion_main!(benches);
