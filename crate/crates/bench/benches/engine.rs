use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hcebnn::reference::fd_solve;
use hcebnn::surrogate::{evaluate_batch, forward_batch, loss_parameter_gradient, EvalSensitivity};
use hcebnn_bench::{grid, mixed_plate, network, unit_points};

fn derivatives(c: &mut Criterion) {
    let mut g = c.benchmark_group("network");
    for n in [100, 2000] {
        let (arch, p) = network(2);
        let pts = unit_points(n, false, 1);
        g.bench_with_input(BenchmarkId::new("values", n), &pts, |b, pts| {
            b.iter(|| forward_batch(black_box(&p), &arch, pts).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("derivatives", n), &pts, |b, pts| {
            b.iter(|| evaluate_batch(black_box(&p), &arch, pts).unwrap())
        });
    }
    g.finish();
}

fn residual_gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("residual_gradient");
    for has_time in [false, true] {
        let (arch, p) = network(if has_time { 3 } else { 2 });
        let pts = unit_points(2000, has_time, 2);
        let name = if has_time { "transient" } else { "steady" };
        g.bench_function(name, |b| {
            b.iter(|| {
                loss_parameter_gradient(black_box(&p), &arch, &pts, |_, e| {
                    let r = e.hess_diag.iter().sum::<f64>() - e.grad_time.unwrap_or(0.0);
                    let mut s = EvalSensitivity::zeros(2);
                    s.hess_diag = vec![2.0 * r; 2];
                    if has_time {
                        s.grad_time = -2.0 * r;
                    }
                    (r * r, s)
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

fn finite_difference(c: &mut Criterion) {
    let mut g = c.benchmark_group("fd_solve");
    g.sample_size(10);
    let steady = mixed_plate();
    for nodes in [21, 41, 81] {
        g.bench_with_input(BenchmarkId::new("steady", nodes), &grid(nodes, None), |b, cfg| {
            b.iter(|| fd_solve(&steady, cfg).unwrap())
        });
    }
    let transient = mixed_plate().with_transient(600.0, 273.15).unwrap();
    g.bench_function("transient_41", |b| b.iter(|| fd_solve(&transient, &grid(41, Some(5.0))).unwrap()));
    g.finish();
}

criterion_group!(benches, derivatives, residual_gradient, finite_difference);
criterion_main!(benches);
