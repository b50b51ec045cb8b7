use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dataenrich::synthesis::{generate, Preset};
use dataenrich::{default_step_sizes, fit, pbgd_step, project_l1, FitConfig, ParameterStack, UpdateOrder};
use ndarray::Array1;
use std::hint::black_box;

fn bench_project_l1(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_l1");
    for p in [100usize, 1000, 10_000] {
        // Deterministic, mixed-sign input well outside the ball.
        let v = Array1::from_iter((0..p).map(|i| ((i * 7919 % 1000) as f64 - 500.0) / 50.0));
        group.throughput(Throughput::Elements(p as u64));
        group.bench_with_input(BenchmarkId::from_parameter(p), &v, |b, v| {
            b.iter(|| project_l1(black_box(v.view()), black_box(10.0)).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("pbgd_step");
    group.sample_size(20);
    for preset in [Preset::FigA, Preset::FigC, Preset::FigD] {
        let inst = generate(&preset.spec(1)).unwrap();
        let steps = default_step_sizes(&inst.dataset);
        let start = ParameterStack::zeros(inst.dataset.num_groups(), inst.dataset.dim());
        for order in [UpdateOrder::Jacobi, UpdateOrder::GaussSeidel] {
            let id = BenchmarkId::new(preset.name(), format!("{order:?}"));
            group.bench_function(id, |b| {
                b.iter(|| pbgd_step(&inst.dataset, &inst.constraints, &steps, order, black_box(&start)).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_100_iters");
    group.sample_size(10);
    let inst = generate(&Preset::FigA.spec(1)).unwrap();
    let cfg = FitConfig { max_iters: 100, update_order: UpdateOrder::GaussSeidel, ..FitConfig::default() };
    group.bench_function("fig_a", |b| b.iter(|| fit(&inst.dataset, &inst.constraints, black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_project_l1, bench_sweep, bench_fit);
criterion_main!(benches);
