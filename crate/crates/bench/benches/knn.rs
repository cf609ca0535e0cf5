use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use viscon::synth::gaussian_features;
use viscon::{build_index, KnnConfig, Metric};

fn build(c: &mut Criterion) {
    let features = gaussian_features(5000, 64, 1);
    let mut group = c.benchmark_group("build_index_5000x64");
    group.sample_size(10);
    group.bench_function("exact", |b| {
        let cfg = KnnConfig::exact(50, Metric::Cosine);
        b.iter(|| build_index(&features, &cfg).unwrap())
    });
    for trees in [8, 32] {
        group.bench_with_input(BenchmarkId::new("approx_trees", trees), &trees, |b, &trees| {
            let cfg = KnnConfig {
                num_trees: trees,
                ..KnnConfig::default()
            };
            b.iter(|| build_index(&features, &cfg).unwrap())
        });
    }
    group.finish();
}

fn query(c: &mut Criterion) {
    let features = gaussian_features(20_000, 64, 2);
    let index = build_index(&features, &KnnConfig { k: 10, ..KnnConfig::default() }).unwrap();
    let probe = gaussian_features(1, 64, 3);
    c.bench_function("query_20000x64_k50", |b| b.iter(|| index.query(probe.row(0), 50).unwrap()));
}

criterion_group!(benches, build, query);
criterion_main!(benches);
