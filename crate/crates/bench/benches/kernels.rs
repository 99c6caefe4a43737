use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fecanet_bench::{conv4d_case, feature_pair, train_case};
use fecanet_core::correlation::cosine_correlation;
use fecanet_core::crm::local_self_similarity;
use fecanet_core::pipeline::train_step;
use fecanet_core::{center_pivot_conv4d, full_conv4d};
use std::hint::black_box;

fn conv4d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv4d");
    g.sample_size(10);
    for h in [4, 6, 8] {
        let (x, k) = conv4d_case(2, h, 4, 1, 0);
        let dense = k.sparsify().unwrap();
        g.bench_with_input(BenchmarkId::new("center_pivot", h), &h, |b, _| {
            b.iter(|| center_pivot_conv4d(black_box(&x), &k).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("full", h), &h, |b, _| {
            b.iter(|| full_conv4d(black_box(&x), &dense, k.spec).unwrap())
        });
    }
    g.finish();
}

fn correlation(c: &mut Criterion) {
    let (fq, fs) = feature_pair(64, 8, 8, 1);
    c.bench_function("cosine_correlation_64x8x8", |b| {
        b.iter(|| cosine_correlation(black_box(&fq), &fs).unwrap())
    });
    let mut g = c.benchmark_group("self_similarity");
    for k in [3, 5, 7, 9] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| local_self_similarity(black_box(&fq), k).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    let mut case = train_case(32, 4, 2);
    g.bench_function("32x32_batch4", |b| {
        b.iter(|| train_step(&mut case.model, &case.batch, &mut case.adam, &mut case.bank).unwrap())
    });
    g.finish();
}

criterion_group!(benches, conv4d, correlation, training);
criterion_main!(benches);
