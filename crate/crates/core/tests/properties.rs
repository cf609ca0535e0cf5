use nalgebra::DMatrix;
use proptest::prelude::*;

use viscon::alignment::{fit_ridge, hinge, normal_equation_residual, pair_loss};
use viscon::analysis::correlate_external;
use viscon::concreteness::{
    frequency_continuous, frequency_discrete, score_continuous, score_discrete, CiConfig, CiMethod, ConcretenessScore,
};
use viscon::{build_index, ConceptIndex, Error, FeatureMatrix, KnnConfig, Metric, SearchMode, TopicMatrix};

fn features(dim: usize, data: Vec<f32>) -> FeatureMatrix {
    FeatureMatrix::with_index_ids(dim, data).unwrap()
}

fn arb_features(max_n: usize) -> impl Strategy<Value = FeatureMatrix> {
    (12usize..max_n, 1usize..6).prop_flat_map(|(n, dim)| {
        proptest::collection::vec(-10i8..10, n * dim)
            .prop_map(move |v| features(dim, v.into_iter().map(|x| x as f32 * 0.5 + 0.1).collect()))
    })
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

fn cos_dist(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn score(concept: &str, value: f64) -> ConcretenessScore {
    ConcretenessScore::new(concept.into(), value, None, 10.0, 0.1, None, CiMethod::None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_lists_equal_brute_force(f in arb_features(80), k in 1usize..8) {
        let index = build_index(&f, &KnnConfig::exact(k, Metric::Euclidean)).unwrap();
        let lists = index.all_neighbors();
        for v in 0..f.n() {
            let mut all: Vec<(f64, usize)> = (0..f.n())
                .filter(|&j| j != v)
                .map(|j| (sq_dist(f.row(v), f.row(j)), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = all[..k].iter().map(|&(_, j)| j as u32).collect();
            prop_assert_eq!(lists.get(v), &want[..]);
        }
    }

    #[test]
    fn approximate_lists_are_verified_and_sorted(f in arb_features(150), k in 1usize..10, trees in 1usize..6, seed: u64) {
        let cfg = KnnConfig {
            k,
            metric: Metric::Cosine,
            mode: SearchMode::Approximate,
            num_trees: trees,
            search_budget: 20,
            seed,
            ..KnnConfig::default()
        };
        let index = build_index(&f, &cfg).unwrap();
        let lists = index.all_neighbors();
        for v in 0..f.n() {
            let list = lists.get(v);
            prop_assert!(!list.contains(&(v as u32)), "row {} lists itself", v);
            let mut unique = list.to_vec();
            unique.sort_unstable();
            unique.dedup();
            prop_assert_eq!(unique.len(), k);
            let reported = index.distances_from_row(v, list);
            for (w, &j) in reported.windows(2).zip(list) {
                prop_assert!(w[0] <= w[1] + 1e-12, "row {} unsorted at neighbor {}", v, j);
            }
            for (&d, &j) in reported.iter().zip(list) {
                prop_assert!((d - cos_dist(f.row(v), f.row(j as usize))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_topics_reproduce_discrete_scores(
        f in arb_features(120),
        labels in proptest::collection::vec(0usize..5, 120),
        k in 1usize..10,
    ) {
        let n = f.n();
        let mut postings = vec![Vec::new(); 5];
        for v in 0..n {
            if labels[v] < 4 {
                postings[labels[v]].push(v as u32);
            }
        }
        postings.retain(|p| !p.is_empty());
        prop_assume!(!postings.is_empty());
        let vocab = (0..postings.len()).map(|w| format!("w{w}")).collect();
        let concepts = ConceptIndex::from_postings(n, vocab, postings).unwrap();
        let topics = TopicMatrix::one_hot(&concepts).unwrap();
        let neighbors = build_index(&f, &KnnConfig::exact(k, Metric::Cosine)).unwrap().all_neighbors();
        let d = score_discrete(&neighbors, &concepts, &CiConfig::default()).unwrap();
        let c = score_continuous(&neighbors, &topics, &CiConfig::default()).unwrap();
        for (a, b) in d.iter().zip(&c) {
            prop_assert_eq!(&a.concept, &b.concept);
            prop_assert!((a.score - b.score).abs() <= 1e-9 * a.score.abs().max(1e-300));
        }
        // Topic frequency is a share of the labeled mass, word frequency a
        // share of all images: equal up to the labeled fraction.
        let labeled = topics.total_mass() / n as f64;
        for (a, b) in frequency_discrete(&concepts).iter().zip(frequency_continuous(&topics)) {
            prop_assert!((a - b * labeled).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_satisfies_normal_equations(
        (n, din, dout) in (3usize..40, 1usize..8, 1usize..5),
        lambda in 1e-3f64..1e3,
        seed: u64,
    ) {
        // Deterministic pseudo-random entries from the seed.
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f64 / 1000.0 - 1.0
        };
        let x = DMatrix::from_fn(n, din, |_, _| next());
        let y = DMatrix::from_fn(n, dout, |_, _| next());
        let w = fit_ridge(&x, &y, lambda).unwrap();
        let (resid, scale) = normal_equation_residual(&w, &x, &y, lambda);
        prop_assert!(resid <= 1e-6 * scale.max(1e-12), "residual {} vs {}", resid, scale);
    }

    #[test]
    fn ns_loss_vanishes_beyond_the_margin(alpha in 0.01f64..1.0, pos in -1.0f64..1.0, gap_a in 0.0f64..1.0, gap_b in 0.0f64..1.0) {
        let (na, nb) = (pos - alpha - gap_a, pos - alpha - gap_b);
        prop_assert_eq!(pair_loss(alpha, pos, na, nb), 0.0);
        // Inside the margin the loss is the positive hinge.
        let inside = pos - alpha * 0.5;
        prop_assert!((hinge(alpha, pos, inside) - alpha * 0.5).abs() < 1e-12);
    }
}

#[test]
fn external_scores_correlate_with_themselves() {
    let scores: Vec<ConcretenessScore> = (0..8).map(|i| score(&format!("c{i}"), i as f64 * 0.7)).collect();
    let external: Vec<(String, f64)> = (0..8).map(|i| (format!("c{i}"), (i as f64).exp())).collect();
    let c = correlate_external(&scores, &external).unwrap();
    assert_eq!(c.n_overlap, 8);
    assert!((c.rho - 1.0).abs() < 1e-12);
    assert_eq!(c.p_value, 0.0);

    let reversed: Vec<(String, f64)> = (0..8).map(|i| (format!("c{i}"), -(i as f64))).collect();
    assert!((correlate_external(&scores, &reversed).unwrap().rho + 1.0).abs() < 1e-12);
}

#[test]
fn external_scores_need_overlap() {
    let scores: Vec<ConcretenessScore> = (0..5).map(|i| score(&format!("c{i}"), i as f64)).collect();
    let disjoint: Vec<(String, f64)> = (0..5).map(|i| (format!("other{i}"), i as f64)).collect();
    assert!(matches!(correlate_external(&scores, &disjoint), Err(Error::InsufficientOverlap { .. })));
    // Only the shared labels are used.
    let partial = vec![("c1".to_string(), 1.0), ("c2".into(), 4.0), ("c4".into(), 9.0), ("zz".into(), -3.0)];
    assert_eq!(correlate_external(&scores, &partial).unwrap().n_overlap, 3);
}
