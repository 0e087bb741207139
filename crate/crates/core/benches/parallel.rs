use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qwgeom_core::bounds::{sweep_bounds, BoundOptions};
use qwgeom_core::oracle::for_each_horizon;
use qwgeom_core::perturbation::{candidate_terms, SelectionPolicy};
use qwgeom_core::{load_fixture, Execution, PerformanceFunctional};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn product_sweep(c: &mut Criterion) {
    let (walk, _) = load_fixture("EX4").unwrap();
    let f = PerformanceFunctional::mean_horizontal();
    let cands = candidate_terms(&walk, 12).unwrap();
    let opts = BoundOptions::default();
    let mut group = c.benchmark_group("product_sweep_ex4");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep_bounds(&walk, &f, &cands, SelectionPolicy::Projection, &opts, exec))
        });
    }
    group.finish();
}

fn finite_horizon(c: &mut Criterion) {
    let (walk, _) = load_fixture("EX5").unwrap();
    let f = PerformanceFunctional::empty_probability();
    let mut group = c.benchmark_group("finite_horizon_ex5");
    group.sample_size(10);
    for n in [100, 300] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| {
                    let mut total = 0.0;
                    for_each_horizon(&walk, &f, 50, n, exec, |_, ft| total += ft[0]);
                    total
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, product_sweep, finite_horizon);
criterion_main!(benches);
