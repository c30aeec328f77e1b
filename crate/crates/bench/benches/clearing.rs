use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use esmclear_bench::{path_case, tree_case};
use esmclear_core::bestresp::{BestResponse, PriceDomain};
use esmclear_core::clearing::{clear_market, ClearOptions};
use esmclear_core::model::to_per_unit;

fn best_response(c: &mut Criterion) {
    let mut g = c.benchmark_group("best_response");
    for n in [1usize, 10, 100] {
        let case = to_per_unit(&path_case(1, n, 3)).unwrap();
        let lesm = case.lesms()[0].clone();
        g.bench_with_input(BenchmarkId::from_parameter(n), &lesm, |b, m| {
            b.iter(|| BestResponse::build(m, PriceDomain::default()).unwrap())
        });
    }
    g.finish();
}

fn clearing(c: &mut Criterion) {
    let mut g = c.benchmark_group("clear_market");
    g.sample_size(10);
    let opts = ClearOptions::default();
    let case = path_case(15, 10, 12);
    g.bench_function("path_15x10", |b| {
        b.iter(|| clear_market(&case, &opts).unwrap())
    });
    let case = tree_case(123, 10, 0);
    for workers in [1usize, 4] {
        let opts = ClearOptions {
            workers,
            ..ClearOptions::default()
        };
        g.bench_with_input(BenchmarkId::new("tree_123x10", workers), &opts, |b, o| {
            b.iter(|| clear_market(&case, o).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, best_response, clearing);
criterion_main!(benches);
