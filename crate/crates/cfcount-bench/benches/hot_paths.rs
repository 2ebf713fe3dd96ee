//! Benchmarks for the enumeration and spectral hot paths.

use cfcount::cf_dynamics::{Alphabet, MarkovSystem};
use cfcount::congruence::FiniteGroup;
use cfcount::counting::{enumerate_ball, renewal_count, BallQuery, TestFn};
use cfcount::mixing::{spectral_gap, walk};
use cfcount::thermo::{dimension, SpectralModel};
use cfcount::twisted::TwistedOperator;
use cfcount::zaremba::denominator_set;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn sys12() -> MarkovSystem {
    MarkovSystem::build(Alphabet::new(vec![1, 2]).unwrap()).unwrap()
}

fn bench_ball(c: &mut Criterion) {
    let sys = sys12();
    let mut group = c.benchmark_group("ball_enumeration");
    group.sample_size(10);
    for r in [100.0, 400.0] {
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| {
            let query = BallQuery::new(sys.clone(), r);
            b.iter(|| enumerate_ball(black_box(&query), None).unwrap().total_count)
        });
    }
    group.finish();
}

fn bench_renewal(c: &mut Criterion) {
    let sys = sys12();
    let x = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut group = c.benchmark_group("renewal_count");
    group.sample_size(10);
    for a in [10.0, 14.0] {
        group.bench_with_input(BenchmarkId::from_parameter(a), &a, |b, &a| {
            b.iter(|| renewal_count(black_box(&sys), a, x, &TestFn::One).unwrap())
        });
    }
    group.finish();
}

fn bench_dimension(c: &mut Criterion) {
    let sys = sys12();
    let mut group = c.benchmark_group("dimension");
    group.sample_size(10);
    group.bench_function("a12_nodes16", |b| {
        b.iter(|| dimension(black_box(&sys), 16, 1e-10).unwrap().delta)
    });
    group.finish();
}

fn bench_twisted_matvec(c: &mut Criterion) {
    let sys = sys12();
    let gibbs = dimension(&sys, 8, 1e-10).unwrap();
    let model = SpectralModel::new(sys, 8).unwrap();
    let q5 = FiniteGroup::enumerate(5).unwrap();
    let op = TwistedOperator::new(&model, &q5, gibbs.delta, 0.0).unwrap();
    let v = vec![cfcount::num::complex::Complex64::new(1.0, 0.5); op.len()];
    let mut group = c.benchmark_group("twisted_matvec");
    group.bench_function("q5_nodes8", |b| b.iter(|| op.matvec(black_box(&v)).unwrap()));
    group.finish();
}

fn bench_walk(c: &mut Criterion) {
    let alphabet = Alphabet::new(vec![1, 2]).unwrap();
    let g13 = FiniteGroup::enumerate(13).unwrap();
    let mut group = c.benchmark_group("mixing");
    group.sample_size(10);
    group.bench_function("walk_q13_r8", |b| b.iter(|| walk(&g13, &alphabet, 8).unwrap().total_mass()));
    group.bench_function("gap_q13", |b| b.iter(|| spectral_gap(&g13, &alphabet).unwrap()));
    group.finish();
}

fn bench_zaremba(c: &mut Criterion) {
    let alphabet = Alphabet::range(5).unwrap();
    let mut group = c.benchmark_group("zaremba");
    group.sample_size(10);
    group.bench_function("a15_n100k", |b| {
        b.iter(|| denominator_set(black_box(&alphabet), 100_000).count_window(1, 100_000).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_ball,
    bench_renewal,
    bench_dimension,
    bench_twisted_matvec,
    bench_walk,
    bench_zaremba
);
criterion_main!(benches);
