use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tlbo_bench::regression_data;
use tlbo_core::{fit_hyperparameters, FitConfig, GpModel, KernelFamily};

fn condition(c: &mut Criterion) {
    let mut g = c.benchmark_group("condition");
    for n in [20, 50, 200] {
        let (x, y) = regression_data(n, 3, 1);
        let k = KernelFamily::default().instantiate(3, 1.0, 0.5);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| GpModel::condition(black_box(&x), black_box(&y), k.clone(), 1e-4).unwrap())
        });
    }
    g.finish();
}

fn likelihood(c: &mut Criterion) {
    let mut g = c.benchmark_group("lml_and_gradient");
    for n in [50, 200] {
        let (x, y) = regression_data(n, 3, 2);
        let k = KernelFamily::default().instantiate(3, 1.0, 0.5);
        let gp = GpModel::condition(&x, &y, k, 1e-4).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(&gp).log_marginal_likelihood())
        });
    }
    g.finish();
}

fn predict(c: &mut Criterion) {
    let (x, y) = regression_data(120, 3, 3);
    let k = KernelFamily::default().instantiate(3, 1.0, 0.5);
    let gp = GpModel::condition(&x, &y, k, 1e-4).unwrap();
    c.bench_function("predict_point_n120", |b| {
        b.iter(|| black_box(&gp).predict_point(black_box(&[0.3, 0.4, 0.5]), true))
    });
}

fn fit(c: &mut Criterion) {
    let (x, y) = regression_data(60, 3, 4);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("n60_d3", |b| {
        b.iter(|| fit_hyperparameters(&x, &y, KernelFamily::default(), &FitConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, condition, likelihood, predict, fit);
criterion_main!(benches);
