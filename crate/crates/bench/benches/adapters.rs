use std::hint::black_box;

use bhra_bench::{dense, Workload};
use bhra_core::adapters::{forward_blockwise, forward_materialized, AdapterKind};
use bhra_core::cost::factored_blockwise_apply;
use bhra_core::grad::{gradients, BackpropContext};
use bhra_core::matrix::singular_values;
use bhra_core::spectral::SpectralReport;
use bhra_core::BlockGrid;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const DIM: usize = 64;
const R_TOT: usize = 8;
const TOKENS: usize = 8;

fn forward_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for b in [1, 2, 4, 8] {
        let w = Workload::new(AdapterKind::Bhra, DIM, R_TOT, b, TOKENS);
        group.bench_with_input(BenchmarkId::new("bhra_masked", b), &w, |bench, w| {
            bench.iter(|| forward_blockwise(&w.w0, &w.state, &w.cfg, black_box(&w.x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bhra_factored", b), &w, |bench, w| {
            bench.iter(|| factored_blockwise_apply(&w.state, black_box(&w.x)).unwrap())
        });
    }
    for kind in AdapterKind::ALL {
        let w = Workload::new(kind, DIM, R_TOT, 4, TOKENS);
        group.bench_with_input(BenchmarkId::new("materialized", kind), &w, |bench, w| {
            bench.iter(|| forward_materialized(&w.w0, &w.state, &w.cfg, black_box(&w.x)).unwrap())
        });
    }
    group.finish();
}

fn gradient_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradients");
    for kind in AdapterKind::ALL {
        let w = Workload::new(kind, DIM, R_TOT, 4, TOKENS);
        group.bench_with_input(BenchmarkId::from_parameter(kind), &w, |bench, w| {
            bench.iter(|| {
                let ctx =
                    BackpropContext::for_squared_loss(&w.w0, &w.state, &w.cfg, &w.x, &w.target)
                        .unwrap();
                gradients(&ctx, &w.w0, &w.state, &w.cfg).unwrap()
            })
        });
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for dim in [16, 32, 64] {
        let m = dense(dim, dim, 7);
        group.bench_with_input(BenchmarkId::new("singular_values", dim), &m, |bench, m| {
            bench.iter(|| singular_values(black_box(m)).unwrap())
        });
    }
    let m = dense(DIM, DIM, 8);
    let grid = BlockGrid::square(4).unwrap();
    group.bench_function("report_64", |bench| {
        bench.iter(|| SpectralReport::compute(black_box(&m), Some(grid)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, forward_paths, gradient_step, spectral);
criterion_main!(benches);
