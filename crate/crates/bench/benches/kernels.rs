use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sgfbsde::problems::example2;
use sgfbsde::sparse_interp::interpolate;
use sgfbsde::{
    build_gh_rule, conditional_expectation, fast_transform, solve, BasisIndexSet, DomainBox, SolverConfig, SparseGrid,
};

fn grid(q: usize, p: u32) -> SparseGrid {
    let index = Arc::new(BasisIndexSet::new(q, p).unwrap());
    SparseGrid::new(index, DomainBox::cube(q, -1.0, 1.0).unwrap()).unwrap()
}

fn smooth(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| ((i + 1) as f64 * v).sin()).sum::<f64>().exp()
}

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("fast_transform");
    for (q, p) in [(2, 7), (3, 6), (4, 6), (6, 7)] {
        let grid = grid(q, p);
        let values: Vec<f64> = grid.points().map(smooth).collect();
        g.bench_with_input(BenchmarkId::from_parameter(format!("q{q}_p{p}_{}pts", grid.len())), &values, |b, v| {
            b.iter(|| fast_transform(&grid, black_box(v), 1).unwrap())
        });
    }
    g.finish();
}

fn evaluate(c: &mut Criterion) {
    let mut g = c.benchmark_group("interpolant_eval");
    for (q, p) in [(2, 7), (4, 5), (6, 7)] {
        let grid = grid(q, p);
        let s = interpolate(&grid, 1, |x| vec![smooth(x)]).unwrap();
        let x: Vec<f64> = (0..q).map(|i| 0.3 - 0.1 * i as f64).collect();
        let mut scratch = s.scratch();
        let mut out = [0.0];
        g.bench_function(format!("q{q}_p{p}"), |b| {
            b.iter(|| {
                s.eval_into(black_box(&x), &mut scratch, &mut out);
                out[0]
            })
        });
    }
    g.finish();
}

fn quadrature(c: &mut Criterion) {
    let mut g = c.benchmark_group("gh_rule_build");
    for (q, p) in [(3, 4), (4, 6), (6, 7)] {
        g.bench_function(format!("q{q}_p{p}"), |b| b.iter(|| build_gh_rule(black_box(q), black_box(p)).unwrap()));
    }
    g.finish();

    let prob = example2(3).unwrap();
    let grid = grid(3, 4);
    let yq = interpolate(&grid, 1, |x| vec![smooth(x)]).unwrap();
    let rule = build_gh_rule(3, 4).unwrap();
    let x = [0.1, -0.2, 0.3];
    let (y, z) = ([0.5], [0.0, 0.0, 0.0]);
    c.bench_function("conditional_expectation_q3", |b| {
        b.iter(|| conditional_expectation(&yq, black_box(&x), &y, &z, 0.5, 1.0 / 32.0, &prob, &rule).unwrap())
    });
}

fn backward_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_example2_q3");
    g.sample_size(10);
    for k in [1usize, 3] {
        let prob = example2(3).unwrap();
        let cfg = SolverConfig::new(k, 16, 4, 4);
        g.bench_function(format!("k{k}_N16"), |b| b.iter(|| solve(&prob, black_box(&cfg)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, transform, evaluate, quadrature, backward_sweep);
criterion_main!(benches);
