//! Monte-Carlo coverage of the bootstrap interval on random concepts.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use viscon::concreteness::{score_discrete, CiConfig};
use viscon::{build_index, ConceptIndex, FeatureMatrix, KnnConfig, Metric};

#[test]
fn bootstrap_interval_covers_one_for_random_subsets() {
    let (n, k, m) = (10_000, 50, 1000);
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let data = (0..n * 16).map(|_| r.sample::<f32, _>(StandardNormal)).collect();
    let features = FeatureMatrix::with_index_ids(16, data).unwrap();
    let neighbors = build_index(&features, &KnnConfig::exact(k, Metric::Cosine)).unwrap().all_neighbors();
    let trials: Vec<(f64, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|t| {
            let mut r = ChaCha8Rng::seed_from_u64(800 + t);
            let mut postings: Vec<u32> = sample(&mut r, n, m).into_iter().map(|v| v as u32).collect();
            postings.sort_unstable();
            let concepts = ConceptIndex::from_postings(n, vec!["random".into()], vec![postings]).unwrap();
            let s = &score_discrete(&neighbors, &concepts, &CiConfig::bootstrap(t)).unwrap()[0];
            (s.score, s.ci_low.unwrap(), s.ci_high.unwrap())
        })
        .collect();
    let covered = trials.iter().filter(|(_, lo, hi)| *lo <= 1.0 && 1.0 <= *hi).count();
    // Spread of the score across subsets vs the spread the bootstrap assumes.
    let mean = trials.iter().map(|t| t.0).sum::<f64>() / 100.0;
    let sd = (trials.iter().map(|t| (t.0 - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let boot_sd = trials.iter().map(|t| (t.2 - t.1) / (2.0 * 1.96)).sum::<f64>() / 100.0;
    println!("covered {covered}/100; score sd across subsets {sd:.4}, bootstrap sd {boot_sd:.4}");
    assert!(
        covered >= 90,
        "95% bootstrap interval covers 1.0 in {covered}/100 trials; score sd {sd:.4} vs bootstrap sd {boot_sd:.4}"
    );
}
