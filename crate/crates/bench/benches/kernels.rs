use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use faeclust_core::cvxclust::homotopy_path;
use faeclust_core::fdata::{BasisSpec, BasisSystem, FunctionalSample};
use faeclust_core::metrics::{dtw_full, elastic_distance, fast_dtw, SimilarityGraph};
use ndarray::Array2;
use rand::Rng;

/// kNN graph of points on a line, from their sorted order.
fn line_graph(x: &[f64], m: usize) -> SimilarityGraph {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut edges = Vec::new();
    for r in 0..n {
        for q in r + 1..(r + 1 + m).min(n) {
            let (i, j) = (order[r], order[q]);
            edges.push((i, j, (-(x[i] - x[j]).abs()).exp()));
        }
    }
    SimilarityGraph::from_edges(n, m, edges)
}

fn homotopy(c: &mut Criterion) {
    let mut group = c.benchmark_group("homotopy");
    for n in [400usize, 1600, 6400] {
        let mut rng = faeclust_core::rng(n as u64);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = line_graph(&x, 10);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| homotopy_path(&x, &g)));
    }
    group.finish();
}

fn dtw(c: &mut Criterion) {
    let mut rng = faeclust_core::rng(1);
    let mut walk = |n: usize| {
        let mut a = Array2::zeros((n, 2));
        for i in 1..n {
            for d in 0..2 {
                a[[i, d]] = a[[i - 1, d]] + rng.random_range(-1.0..1.0);
            }
        }
        a
    };
    let (a, b) = (walk(256), walk(256));
    let mut group = c.benchmark_group("dtw_256");
    group.bench_function("full", |bch| bch.iter(|| dtw_full(a.view(), b.view())));
    group.bench_function("fast_r4", |bch| bch.iter(|| fast_dtw(a.view(), b.view(), 4)));
    group.finish();
}

fn elastic(c: &mut Criterion) {
    let basis = BasisSystem::new(BasisSpec::bspline(10, 3, [0.0, 1.0])).unwrap();
    let mut rng = faeclust_core::rng(2);
    let mut sample = || {
        let coeffs = Array2::from_shape_fn((2, 10), |_| rng.random_range(-2.0..2.0));
        FunctionalSample::new(0, coeffs, &basis).unwrap()
    };
    let (f, g) = (sample(), sample());
    let mut group = c.benchmark_group("elastic");
    group.sample_size(10);
    group.bench_function("grid_64", |b| b.iter(|| elastic_distance(&f, &g, &basis, 64).unwrap()));
    group.finish();
}

criterion_group!(benches, homotopy, dtw, elastic);
criterion_main!(benches);
