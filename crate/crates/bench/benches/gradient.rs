use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctsne_bench::fixture;
use ctsne_core::bh::{approx_gradient_eval, Criterion as Opening, LabelQuadTree};
use ctsne_core::exact::ctsne_gradient;
use ctsne_core::{build_affinities, knn_search};

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradient");
    g.sample_size(10);
    for n in [1_000, 4_000] {
        let f = fixture(n, 0.01);
        g.bench_with_input(BenchmarkId::new("exact", n), &f, |b, f| {
            b.iter(|| ctsne_gradient(&f.p, black_box(&f.y), &f.spec).unwrap())
        });
    }
    for n in [1_000, 4_000, 16_000] {
        let f = fixture(n, 0.01);
        for (name, opening) in [("bh-standard", Opening::Standard), ("bh-paper", Opening::Paper)] {
            g.bench_with_input(BenchmarkId::new(name, n), &f, |b, f| {
                b.iter(|| approx_gradient_eval(&f.p, black_box(&f.y), &f.spec, 0.5, opening, 1.0).unwrap())
            });
        }
    }
    g.finish();
}

fn tree_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("quadtree");
    for n in [4_000, 16_000] {
        let f = fixture(n, 0.01);
        g.bench_with_input(BenchmarkId::new("build", n), &f, |b, f| {
            b.iter(|| LabelQuadTree::build(black_box(&f.y), &f.labels).unwrap())
        });
    }
    g.finish();
}

fn neighbors(c: &mut Criterion) {
    let mut g = c.benchmark_group("affinities");
    g.sample_size(10);
    for n in [1_000, 4_000] {
        let f = fixture(n, 0.01);
        g.bench_with_input(BenchmarkId::new("knn-90", n), &f, |b, f| {
            b.iter(|| knn_search(black_box(f.data.points()), 90).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("perplexity-30", n), &f, |b, f| {
            b.iter(|| build_affinities(black_box(&f.data), 30.0).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gradients, tree_build, neighbors);
criterion_main!(benches);
