//! Concreteness of discrete words and continuous topics.
//!
//! For a word `w` with image set `V_w`, the mutual-neighbor count of an image
//! `v ∈ V_w` is `|NN^k(v) ∩ V_w|`. Its mean over `V_w` is compared against
//! the `k |V_w| / n` expected when images are assigned to `w` at random, so a
//! word scattered uniformly over the dataset scores about 1 and a tightly
//! clustered word scores up to `n / |V_w|`.
//!
//! Topics generalize the intersection to weights:
//! `score(t) = (n / k) Σ_v Y_vt Σ_{j ∈ NN^k(v)} Y_jt / (Σ_v Y_vt)²`, which
//! reduces to the discrete score for one-hot topic matrices.

mod ci;
mod report;

use rayon::prelude::*;

use crate::dataset::{ConceptIndex, TopicMatrix};
use crate::error::{Error, Result};
use crate::knn::NeighborLists;

pub use ci::{continuous_interval, discrete_interval, CiConfig, CiMethod, MIN_RESAMPLES};
pub use report::{
    read_report_csv, ConcretenessReport, ConcretenessScore, ConceptKind, ReportConfig,
    REPORT_CSV_HEADER,
};

/// Per-image terms `|NN^k(v) ∩ V_w|` for `v ∈ V_w`, in postings order.
pub fn mni_terms(neighbors: &NeighborLists, postings: &[u32]) -> Result<Vec<f64>> {
    if postings.is_empty() {
        return Err(Error::EmptyPostings(String::new()));
    }
    let n = neighbors.n();
    let mut member = vec![false; n];
    for &v in postings {
        let slot = member
            .get_mut(v as usize)
            .ok_or_else(|| Error::InvalidConfig(format!("row {v} not covered by neighbor lists")))?;
        *slot = true;
    }
    Ok(postings
        .iter()
        .map(|&v| {
            neighbors
                .get(v as usize)
                .iter()
                .filter(|&&j| member[j as usize])
                .count() as f64
        })
        .collect())
}

/// `E[MNI^k_w]`, the mean mutual-neighbor count over `V_w`. Lies in `[0, k]`.
pub fn mni_expectation(neighbors: &NeighborLists, postings: &[u32]) -> Result<f64> {
    let terms = mni_terms(neighbors, postings)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `E[MNI] / (k |V_w| / n)`.
pub fn discrete_score(mni_mean: f64, support: usize, n: usize, k: usize) -> f64 {
    mni_mean * n as f64 / (k as f64 * support as f64)
}

pub fn frequency_discrete(concepts: &ConceptIndex) -> Vec<f64> {
    let n = concepts.n_images() as f64;
    (0..concepts.len())
        .map(|w| concepts.postings(w).len() as f64 / n)
        .collect()
}

/// Share of the total topic mass carried by each topic.
pub fn frequency_continuous(topics: &TopicMatrix) -> Vec<f64> {
    let total = topics.total_mass();
    (0..topics.n_topics())
        .map(|t| topics.column_mass(t) / total)
        .collect()
}

fn check_rows(neighbors: &NeighborLists, n: usize) -> Result<()> {
    if neighbors.n() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            found: neighbors.n(),
        });
    }
    Ok(())
}

/// One score per vocabulary word, in vocabulary order.
pub fn score_discrete(
    neighbors: &NeighborLists,
    concepts: &ConceptIndex,
    ci: &CiConfig,
) -> Result<Vec<ConcretenessScore>> {
    let n = concepts.n_images();
    check_rows(neighbors, n)?;
    ci.validate()?;
    let k = neighbors.k();
    let freq = frequency_discrete(concepts);
    (0..concepts.len())
        .into_par_iter()
        .map(|w| {
            let postings = concepts.postings(w);
            let terms = mni_terms(neighbors, postings).map_err(|e| match e {
                Error::EmptyPostings(_) => Error::EmptyPostings(concepts.vocab()[w].clone()),
                other => other,
            })?;
            let mni_mean = terms.iter().sum::<f64>() / terms.len() as f64;
            let score = discrete_score(mni_mean, postings.len(), n, k);
            let interval = discrete_interval(&terms, n, k, ci, w)?;
            Ok(ConcretenessScore::new(
                concepts.vocab()[w].clone(),
                score,
                Some(mni_mean),
                postings.len() as f64,
                freq[w],
                interval,
                ci.method,
            ))
        })
        .collect()
}

/// Sorted report over all words.
pub fn concreteness_discrete(
    neighbors: &NeighborLists,
    concepts: &ConceptIndex,
    ci: &CiConfig,
    config: ReportConfig,
) -> Result<ConcretenessReport> {
    let scores = score_discrete(neighbors, concepts, ci)?;
    Ok(ConcretenessReport::new(scores, config))
}

/// Per-row numerator terms `Y_vt Σ_{j ∈ NN(v)} Y_jt` for topic `t`.
pub fn topic_terms(neighbors: &NeighborLists, topics: &TopicMatrix, t: usize) -> Vec<f64> {
    (0..topics.n())
        .map(|v| {
            let y = topics.weight(v, t);
            if y == 0.0 {
                return 0.0;
            }
            let around: f64 = neighbors
                .get(v)
                .iter()
                .map(|&j| topics.weight(j as usize, t))
                .sum();
            y * around
        })
        .collect()
}

pub fn continuous_score(terms: &[f64], mass: f64, n: usize, k: usize) -> f64 {
    n as f64 / k as f64 * terms.iter().sum::<f64>() / (mass * mass)
}

/// One score per topic column, in column order.
pub fn score_continuous(
    neighbors: &NeighborLists,
    topics: &TopicMatrix,
    ci: &CiConfig,
) -> Result<Vec<ConcretenessScore>> {
    let n = topics.n();
    check_rows(neighbors, n)?;
    ci.validate()?;
    let k = neighbors.k();
    let freq = frequency_continuous(topics);
    (0..topics.n_topics())
        .into_par_iter()
        .map(|t| {
            let mass = topics.column_mass(t);
            if mass <= 0.0 {
                return Err(Error::ZeroMassTopic(topics.topic_ids()[t].clone()));
            }
            let terms = topic_terms(neighbors, topics, t);
            let score = continuous_score(&terms, mass, n, k);
            let interval = continuous_interval(&terms, &topics.column(t), k, ci, t)?;
            Ok(ConcretenessScore::new(
                topics.topic_ids()[t].clone(),
                score,
                None,
                mass,
                freq[t],
                interval,
                ci.method,
            ))
        })
        .collect()
}

pub fn concreteness_continuous(
    neighbors: &NeighborLists,
    topics: &TopicMatrix,
    ci: &CiConfig,
    config: ReportConfig,
) -> Result<ConcretenessReport> {
    let scores = score_continuous(neighbors, topics, ci)?;
    Ok(ConcretenessReport::new(scores, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureMatrix;
    use crate::knn::{Index, KnnConfig, Metric};

    fn two_clusters() -> NeighborLists {
        let f = FeatureMatrix::with_index_ids(1, vec![0.0, 0.1, 10.0, 10.1]).unwrap();
        Index::build(f, KnnConfig::exact(1, Metric::Euclidean))
            .unwrap()
            .all_neighbors()
    }

    #[test]
    fn left_pair_fixture() {
        let nn = two_clusters();
        assert_eq!(mni_expectation(&nn, &[0, 1]).unwrap(), 1.0);
        let concepts = ConceptIndex::from_postings(4, vec!["left".into()], vec![vec![0, 1]]).unwrap();
        let scores = score_discrete(&nn, &concepts, &CiConfig::default()).unwrap();
        assert_eq!(scores[0].score, 2.0);
        assert_eq!(scores[0].mni_mean, Some(1.0));
        assert_eq!(scores[0].frequency, 0.5);
    }

    #[test]
    fn saturation_and_zero() {
        let nn = two_clusters();
        assert_eq!(mni_expectation(&nn, &[0, 1, 2, 3]).unwrap(), 1.0);
        let all = ConceptIndex::from_postings(4, vec!["all".into()], vec![vec![0, 1, 2, 3]]).unwrap();
        let s = score_discrete(&nn, &all, &CiConfig::default()).unwrap();
        assert_eq!(s[0].score, 1.0);
        assert_eq!(s[0].frequency, 1.0);
        // One image from each cluster: neither's neighbor carries the word.
        assert_eq!(mni_expectation(&nn, &[0, 2]).unwrap(), 0.0);
        assert!(mni_expectation(&nn, &[]).is_err());
    }

    #[test]
    fn uniform_topics_score_one() {
        let f = FeatureMatrix::with_index_ids(1, (0..20).map(|i| (i * i) as f32).collect()).unwrap();
        let nn = Index::build(f, KnnConfig::exact(3, Metric::Euclidean))
            .unwrap()
            .all_neighbors();
        let y = TopicMatrix::new(vec!["a".into(), "b".into()], 20, vec![0.37; 40]).unwrap();
        for s in score_continuous(&nn, &y, &CiConfig::default()).unwrap() {
            assert!((s.score - 1.0).abs() < 1e-12, "{}", s.score);
            assert!((s.frequency - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn row_mismatch_is_rejected() {
        let nn = two_clusters();
        let concepts = ConceptIndex::from_postings(5, vec!["a".into()], vec![vec![0]]).unwrap();
        assert!(score_discrete(&nn, &concepts, &CiConfig::default()).is_err());
    }

    #[test]
    fn frequency_counts() {
        let postings: Vec<u32> = (0..123).collect();
        let c = ConceptIndex::from_postings(1000, vec!["w".into()], vec![postings]).unwrap();
        assert_eq!(frequency_discrete(&c), vec![0.123]);
    }
}
