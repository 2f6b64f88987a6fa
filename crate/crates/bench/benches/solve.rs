use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mpcard_bench::ieee33_program;
use mpcard_core::fixtures;
use mpcard_core::grid::LinearizedGrid;
use mpcard_core::mip::{solve_misocp, BnBConfig};
use mpcard_core::program::CardinalityLimit;
use mpcard_core::solver::solve_socp;

fn socp(c: &mut Criterion) {
    let ir = ieee33_program(CardinalityLimit::Unconstrained, 0.8);
    c.bench_function("socp/ieee33_m4", |b| b.iter(|| solve_socp(black_box(&ir), &[])));
}

fn bnb(c: &mut Criterion) {
    let mut group = c.benchmark_group("bnb/ieee33_m4");
    let cfg = BnBConfig::default();
    for n in 1..=3 {
        let ir = ieee33_program(CardinalityLimit::AtMost(n), 0.8);
        group.bench_with_input(BenchmarkId::from_parameter(n), &ir, |b, ir| b.iter(|| solve_misocp(ir, &cfg).unwrap()));
    }
    group.finish();
}

fn linearize(c: &mut Criterion) {
    let net = fixtures::ieee33();
    c.bench_function("linearize/ieee33", |b| b.iter(|| LinearizedGrid::build(black_box(&net), &fixtures::IEEE33_PCC).unwrap()));
}

criterion_group!(benches, socp, bnb, linearize);
criterion_main!(benches);
