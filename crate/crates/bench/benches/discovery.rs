use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use normlens::discovery::{kmeans, knn_augment, KMeansParams};
use normlens_bench::{blobs, project};

fn bench_kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    for n in [200usize, 1000] {
        let vectors = blobs(n, 64, 8, 1);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                kmeans(&ids, &vectors, KMeansParams { k: 8, seed: 7, max_iters: 50 }, 1).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_augment(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_augment");
    for n in [200usize, 2000] {
        let p = project(n, 64, 5, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| knn_augment(p, 0.5).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_kmeans, bench_augment);
criterion_main!(benches);
