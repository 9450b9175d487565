use cleaneval_bench::histogram_pair;
use cleaneval_core::emd;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn by_grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("emd");
    // 8 bins per dimension is the default grid; 3-D is the reference data.
    for (dims, bins, fill) in [(1, 32, 0.8), (2, 8, 0.6), (3, 8, 0.3), (3, 8, 0.6)] {
        let (p, q) = histogram_pair(dims, bins, fill, 42);
        let id = format!("{dims}d-{bins}-fill{fill}");
        g.bench_with_input(BenchmarkId::from_parameter(id), &(p, q), |b, (p, q)| {
            b.iter(|| emd(black_box(p), black_box(q)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, by_grid);
criterion_main!(benches);
