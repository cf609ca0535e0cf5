use criterion::{criterion_group, criterion_main, Criterion};
use viscon::analysis::AffinityMatrix;
use viscon::concreteness::{score_continuous, score_discrete, CiConfig};
use viscon::synth::{benchmark, BenchmarkConfig};
use viscon::{build_index, KnnConfig, Metric, TopicMatrix};

fn scoring(c: &mut Criterion) {
    let bench = benchmark(&BenchmarkConfig::default()).unwrap();
    let concepts = bench.concepts(1).unwrap();
    let neighbors = build_index(&bench.images, &KnnConfig::exact(50, Metric::Cosine))
        .unwrap()
        .all_neighbors();
    // Token proportions as soft topics.
    let aff = AffinityMatrix::from_tokens(&bench.records, &bench.vocab).unwrap();
    let weights: Vec<f64> = (0..aff.n_instances()).flat_map(|i| aff.row(i).to_vec()).collect();
    let topics = TopicMatrix::new(bench.vocab.clone(), aff.n_instances(), weights).unwrap();

    let mut group = c.benchmark_group("score_3000_k50");
    group.bench_function("discrete_normal", |b| {
        b.iter(|| score_discrete(&neighbors, &concepts, &CiConfig::normal()).unwrap())
    });
    group.bench_function("continuous_normal", |b| {
        b.iter(|| score_continuous(&neighbors, &topics, &CiConfig::normal()).unwrap())
    });
    group.sample_size(10);
    group.bench_function("discrete_bootstrap", |b| {
        b.iter(|| score_discrete(&neighbors, &concepts, &CiConfig::bootstrap(0)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
