use criterion::{criterion_group, criterion_main, Criterion};
use viscon::alignment::{fit_least_squares, fit_ridge, LsConfig};
use viscon::synth::{linear_bundle, LinearBundleConfig};

fn ridge(c: &mut Criterion) {
    let (images, texts) = linear_bundle(&LinearBundleConfig {
        n: 4000,
        image_dim: 128,
        text_dim: 64,
        ..LinearBundleConfig::default()
    })
    .unwrap();
    let x = images.to_dmatrix();
    let y = texts.to_dmatrix();
    c.bench_function("fit_ridge_4000x128_to_64", |b| b.iter(|| fit_ridge(&x, &y, 1.0).unwrap()));

    let mut group = c.benchmark_group("least_squares_selection");
    group.sample_size(10);
    group.bench_function("default_grid", |b| {
        b.iter(|| fit_least_squares(&images, &texts, &LsConfig::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, ridge);
criterion_main!(benches);
