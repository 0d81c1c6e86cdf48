use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use robustcert_core::fixtures::fixture;
use robustcert_core::robust::ACTIVITY_TOL;
use robustcert_core::*;

fn robust_layer(c: &mut Criterion) {
    let p = fixture("ex3_2");
    let o = RobustOptions::default();
    c.bench_function("psi_all ex3_2", |b| b.iter(|| psi_all(&p, black_box(&[0.0, 1.0]), &o).unwrap()));
    c.bench_function("worst_case_subdiff ex3_2", |b| {
        b.iter(|| worst_case_subdiff(&p, 0, black_box(&[0.0, 1.0]), ACTIVITY_TOL, &o).unwrap())
    });
}

fn subdifferentials(c: &mut Criterion) {
    let p = fixture("ex3_2");
    let pt = Point::decision(&[0.0, 1.0]);
    c.bench_function("scalarized_subdiff ex3_2", |b| {
        b.iter(|| scalarized_subdiff(black_box(&[0.2, 0.3, 0.5]), &p.objectives, &pt).unwrap())
    });
}

fn kkt(c: &mut Criterion) {
    let mut g = c.benchmark_group("kkt");
    g.sample_size(10);
    for name in ["ex3_2", "ex3_3"] {
        let p = fixture(name);
        g.bench_function(name, |b| b.iter(|| find_kkt_certificate(&p, black_box(&[0.0, 1.0]), &KktOptions::default()).unwrap()));
    }
    g.finish();
}

fn oracles(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracles");
    g.sample_size(10);
    let p = fixture("ex3_2");
    let o = RobustOptions::default();
    g.bench_function("feasible grid 51", |b| b.iter(|| FeasibleGrid::build(&p, black_box(51), &o).unwrap()));
    let grid = FeasibleGrid::build(&p, 101, &o).unwrap();
    g.bench_function("certify_proper 101", |b| b.iter(|| certify_proper(&p, black_box(&[0.0, 1.0]), &grid, 1e-3).unwrap()));
    let q = fixture("ex2_2");
    g.bench_function("classify_type 2000 samples", |b| {
        b.iter(|| classify_type(&q, black_box(&[0.0, -2.0]), &Sampler::new(2000, 42)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, robust_layer, subdifferentials, kkt, oracles);
criterion_main!(benches);
