//! Exact and approximate k-nearest-neighbor search over feature rows.
//!
//! Cosine search runs as euclidean search over L2-normalized copies of the
//! rows. Every returned neighbor is scored with the true metric; the forest
//! only proposes candidates. Ties are broken by lower row index.

mod forest;
mod serialize;

use std::cmp::Ordering;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub use forest::{Forest, LEAF_SIZE};
pub use serialize::INDEX_MAGIC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "angular" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exact,
    #[serde(alias = "approx")]
    Approximate,
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SearchMode::Exact),
            "approx" | "approximate" => Ok(SearchMode::Approximate),
            other => Err(Error::InvalidConfig(format!("unknown search mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    pub mode: SearchMode,
    pub num_trees: usize,
    /// Distinct candidates gathered per query before exact re-ranking.
    pub search_budget: usize,
    pub seed: u64,
    /// Keep `v` in its own neighbor list (sensitivity analysis only).
    #[serde(default)]
    pub include_self: bool,
    /// Neighbor-of-neighbor passes applied after the forest search when
    /// building all lists in approximate mode.
    #[serde(default = "default_refine_rounds")]
    pub refine_rounds: usize,
}

fn default_refine_rounds() -> usize {
    DEFAULT_REFINE_ROUNDS
}

pub const DEFAULT_REFINE_ROUNDS: usize = 1;

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 50,
            metric: Metric::Cosine,
            mode: SearchMode::Approximate,
            num_trees: 32,
            search_budget: 2000,
            seed: 0,
            include_self: false,
            refine_rounds: DEFAULT_REFINE_ROUNDS,
        }
    }
}

impl KnnConfig {
    pub fn exact(k: usize, metric: Metric) -> Self {
        KnnConfig {
            k,
            metric,
            mode: SearchMode::Exact,
            ..KnnConfig::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.k >= n && !(self.include_self && self.k == n) {
            return Err(Error::InvalidConfig(format!(
                "k = {} must be smaller than the number of rows ({n})",
                self.k
            )));
        }
        if self.mode == SearchMode::Approximate {
            if self.num_trees == 0 {
                return Err(Error::InvalidConfig("num_trees must be at least 1".into()));
            }
            if self.search_budget < self.k {
                return Err(Error::InvalidConfig(format!(
                    "search_budget = {} must be at least k = {}",
                    self.search_budget, self.k
                )));
            }
        }
        Ok(())
    }
}

/// `NN^k(v)` for every row, each list ordered by increasing distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    k: usize,
    flat: Vec<u32>,
}

impl NeighborLists {
    pub fn from_lists(k: usize, lists: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(bad) = lists.iter().find(|l| l.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: bad.len(),
            });
        }
        Ok(NeighborLists {
            k,
            flat: lists.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.flat.len() / self.k
        }
    }

    pub fn get(&self, v: usize) -> &[u32] {
        &self.flat[v * self.k..(v + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.flat.chunks_exact(self.k)
    }

    /// First `k` entries of every list.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidConfig(format!("cannot truncate {}-NN lists to {k}", self.k)));
        }
        Ok(NeighborLists {
            k,
            flat: self.iter().flat_map(|l| l[..k].iter().copied()).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Index {
    config: KnnConfig,
    features: FeatureMatrix,
    points: Vec<f64>,
    forest: Option<Forest>,
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    row: u32,
}

impl Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row.cmp(&other.row))
    }
}

pub fn build_index(features: &FeatureMatrix, config: &KnnConfig) -> Result<Index> {
    Index::build(features.clone(), config.clone())
}

impl Index {
    pub fn build(features: FeatureMatrix, config: KnnConfig) -> Result<Self> {
        if features.dim() == 0 {
            return Err(Error::InvalidConfig("feature dimension is 0".into()));
        }
        config.validate(features.n())?;
        let points = prepare_points(&features, config.metric);
        let forest = match config.mode {
            SearchMode::Exact => None,
            SearchMode::Approximate => Some(Forest::build(
                &points,
                features.dim(),
                config.num_trees,
                config.seed,
            )),
        };
        Ok(Index {
            config,
            features,
            points,
            forest,
        })
    }

    pub(crate) fn from_parts(
        config: KnnConfig,
        features: FeatureMatrix,
        forest: Option<Forest>,
    ) -> Result<Self> {
        config.validate(features.n())?;
        let points = prepare_points(&features, config.metric);
        Ok(Index {
            config,
            features,
            points,
            forest,
        })
    }

    pub fn config(&self) -> &KnnConfig {
        &self.config
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn forest(&self) -> Option<&Forest> {
        self.forest.as_ref()
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    fn point(&self, row: usize) -> &[f64] {
        let d = self.dim();
        &self.points[row * d..(row + 1) * d]
    }

    /// Distance under the configured metric between a prepared query and a row.
    /// For cosine this is the squared euclidean distance between unit vectors,
    /// `2 - 2 cos`.
    fn distance(&self, query: &[f64], row: usize) -> f64 {
        squared_euclidean(query, self.point(row))
    }

    fn prepare_query(&self, vector: &[f32]) -> Result<Vec<f64>> {
        if vector.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: vector.len(),
            });
        }
        let mut q: Vec<f64> = vector.iter().map(|&x| x as f64).collect();
        if self.config.metric == Metric::Cosine {
            normalize(&mut q);
        }
        Ok(q)
    }

    fn search(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Scored> {
        let mut scored: Vec<Scored> = match &self.forest {
            None => (0..self.n())
                .filter(|&r| Some(r) != exclude)
                .map(|r| Scored {
                    dist: self.distance(query, r),
                    row: r as u32,
                })
                .collect(),
            Some(forest) => forest
                .candidates(query, self.config.search_budget, self.n(), exclude)
                .into_iter()
                .map(|r| Scored {
                    dist: self.distance(query, r as usize),
                    row: r,
                })
                .collect(),
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Vec::new();
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, Scored::cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(Scored::cmp);
        scored
    }

    /// Neighbor lists with the configured `k`.
    pub fn all_neighbors(&self) -> NeighborLists {
        self.all_neighbors_k(self.config.k)
            .expect("configured k was validated at build time")
    }

    /// Neighbor lists for a different `k` over the same index.
    pub fn all_neighbors_k(&self, k: usize) -> Result<NeighborLists> {
        KnnConfig {
            k,
            ..self.config.clone()
        }
        .validate(self.n())?;
        let include_self = self.config.include_self;
        let exclude = |v: usize| if include_self { None } else { Some(v) };
        let mut lists: Vec<Vec<Scored>> = (0..self.n())
            .into_par_iter()
            .map(|v| self.search(self.point(v), k, exclude(v)))
            .collect();
        if self.forest.is_some() {
            for _ in 0..self.config.refine_rounds {
                let next = self.refine(&lists, k, include_self);
                let done = next == lists;
                lists = next;
                if done {
                    break;
                }
            }
        }
        NeighborLists::from_lists(
            k,
            lists
                .into_iter()
                .map(|l| l.into_iter().map(|s| s.row).collect())
                .collect(),
        )
    }

    /// One neighbor-of-neighbor pass: every row re-scores the current lists of
    /// its neighbors and reverse neighbors. Reads only the previous round, so
    /// the result does not depend on scheduling.
    fn refine(&self, lists: &[Vec<Scored>], k: usize, include_self: bool) -> Vec<Vec<Scored>> {
        let n = self.n();
        let mut reverse: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (v, list) in lists.iter().enumerate() {
            for s in list {
                let r = &mut reverse[s.row as usize];
                if r.len() < k {
                    r.push(v as u32);
                }
            }
        }
        (0..n)
            .into_par_iter()
            .map(|v| {
                let mut ids: Vec<u32> = Vec::with_capacity(4 * k * k);
                let sources = lists[v].iter().map(|s| s.row).chain(reverse[v].iter().copied());
                for u in sources {
                    ids.push(u);
                    ids.extend(lists[u as usize].iter().map(|s| s.row));
                }
                ids.sort_unstable();
                ids.dedup();
                let q = self.point(v);
                let mut scored: Vec<Scored> = ids
                    .into_iter()
                    .filter(|&j| include_self || j as usize != v)
                    .map(|j| Scored {
                        dist: self.distance(q, j as usize),
                        row: j,
                    })
                    .collect();
                let keep = k.min(scored.len());
                if keep < scored.len() {
                    scored.select_nth_unstable_by(keep - 1, Scored::cmp);
                    scored.truncate(keep);
                }
                scored.sort_unstable_by(Scored::cmp);
                scored
            })
            .collect()
    }

    /// The `k` rows nearest to an external vector. A stored row equal to the
    /// query is returned like any other row.
    pub fn query(&self, vector: &[f32], k: usize) -> Result<Vec<usize>> {
        Ok(self
            .query_with_distances(vector, k)?
            .into_iter()
            .map(|(r, _)| r)
            .collect())
    }

    /// Like [`query`](Self::query) with metric distances: euclidean distance,
    /// or `1 - cos` for cosine.
    pub fn query_with_distances(&self, vector: &[f32], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let q = self.prepare_query(vector)?;
        Ok(self
            .search(&q, k, None)
            .into_iter()
            .map(|s| (s.row as usize, self.metric_distance(s.dist)))
            .collect())
    }

    /// Metric distances from `v` to each entry of `neighbors`.
    pub fn distances_from_row(&self, v: usize, neighbors: &[u32]) -> Vec<f64> {
        neighbors
            .iter()
            .map(|&j| self.metric_distance(self.distance(self.point(v), j as usize)))
            .collect()
    }

    fn metric_distance(&self, internal: f64) -> f64 {
        match self.config.metric {
            Metric::Cosine => internal / 2.0,
            Metric::Euclidean => internal.sqrt(),
        }
    }
}

fn prepare_points(features: &FeatureMatrix, metric: Metric) -> Vec<f64> {
    let mut points: Vec<f64> = features.data().iter().map(|&x| x as f64).collect();
    if metric == Metric::Cosine {
        points
            .chunks_exact_mut(features.dim())
            .for_each(normalize);
    }
    points
}

pub(crate) fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f32>>();
        FeatureMatrix::with_index_ids(d, data).unwrap()
    }

    /// O(n^2) scan computing distances directly from the raw rows.
    fn brute_force(f: &FeatureMatrix, metric: Metric, q: &[f32], k: usize, skip: Option<usize>) -> Vec<usize> {
        let dist = |row: &[f32]| -> f64 {
            match metric {
                Metric::Euclidean => row
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum::<f64>(),
                Metric::Cosine => {
                    let ab: f64 = row.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let aa: f64 = row.iter().map(|a| (*a as f64).powi(2)).sum();
                    let bb: f64 = q.iter().map(|b| (*b as f64).powi(2)).sum();
                    1.0 - ab / (aa.sqrt() * bb.sqrt())
                }
            }
        };
        let mut all: Vec<(f64, usize)> = (0..f.n())
            .filter(|&r| Some(r) != skip)
            .map(|r| (dist(f.row(r)), r))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, r)| r).collect()
    }

    #[test]
    fn collinear_middle_point() {
        let f = FeatureMatrix::with_index_ids(1, vec![0.0, 1.0, 2.5]).unwrap();
        let idx = Index::build(f, KnnConfig::exact(1, Metric::Euclidean)).unwrap();
        let nn = idx.all_neighbors();
        assert_eq!(nn.get(0), &[1]);
        assert_eq!(nn.get(2), &[1]);
        assert_eq!(nn.get(1), &[0]);
    }

    #[test]
    fn duplicates_name_each_other() {
        let f = FeatureMatrix::with_index_ids(2, vec![1.0, 2.0, 5.0, 5.0, 1.0, 2.0]).unwrap();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let idx = Index::build(f.clone(), KnnConfig::exact(1, metric)).unwrap();
            let nn = idx.all_neighbors();
            assert_eq!(nn.get(0), &[2]);
            assert_eq!(nn.get(2), &[0]);
        }
    }

    #[test]
    fn config_errors() {
        let f = gaussian(5, 3, 1);
        assert!(Index::build(f.clone(), KnnConfig::exact(5, Metric::Cosine)).is_err());
        assert!(Index::build(f.clone(), KnnConfig::exact(0, Metric::Cosine)).is_err());
        let cfg = KnnConfig {
            k: 3,
            search_budget: 2,
            ..KnnConfig::default()
        };
        assert!(Index::build(f.clone(), cfg).is_err());
        let cfg = KnnConfig {
            k: 3,
            num_trees: 0,
            ..KnnConfig::default()
        };
        assert!(Index::build(f, cfg).is_err());
    }

    #[test]
    fn query_returns_stored_row_and_breaks_ties_low() {
        let f = FeatureMatrix::with_index_ids(
            1,
            vec![10.0, 20.0, 4.0, 30.0, 40.0, 6.0, 50.0],
        )
        .unwrap();
        let idx = Index::build(f, KnnConfig::exact(1, Metric::Euclidean)).unwrap();
        assert_eq!(idx.query(&[30.0], 1).unwrap(), vec![3]);
        // 5.0 is equidistant from rows 2 (4.0) and 5 (6.0).
        assert_eq!(idx.query(&[5.0], 2).unwrap(), vec![2, 5]);
        assert!(matches!(
            idx.query(&[1.0, 2.0], 1),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn exact_matches_brute_force() {
        let f = gaussian(100, 8, 3);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let idx = Index::build(f.clone(), KnnConfig::exact(7, metric)).unwrap();
            let nn = idx.all_neighbors();
            for v in 0..f.n() {
                let expect = brute_force(&f, metric, f.row(v), 7, Some(v));
                let got: Vec<usize> = nn.get(v).iter().map(|&r| r as usize).collect();
                assert_eq!(got, expect, "row {v}");
            }
        }
    }

    #[test]
    fn random_queries_match_brute_force() {
        let f = gaussian(1000, 12, 5);
        let probes = gaussian(25, 12, 6);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let idx = Index::build(f.clone(), KnnConfig::exact(10, metric)).unwrap();
            for q in probes.rows() {
                assert_eq!(idx.query(q, 10).unwrap(), brute_force(&f, metric, q, 10, None));
            }
        }
    }

    #[test]
    fn cosine_lists_invariant_to_row_scaling() {
        let f = gaussian(200, 6, 9);
        let base = Index::build(f.clone(), KnnConfig::exact(5, Metric::Cosine))
            .unwrap()
            .all_neighbors();
        let mut data = f.data().to_vec();
        for (i, x) in data.iter_mut().enumerate() {
            if i / 6 == 17 {
                *x *= 3.0;
            }
        }
        let scaled = FeatureMatrix::with_index_ids(6, data).unwrap();
        let other = Index::build(scaled, KnnConfig::exact(5, Metric::Cosine))
            .unwrap()
            .all_neighbors();
        assert_eq!(base, other);
    }

    #[test]
    fn include_self_flag() {
        let f = gaussian(30, 4, 2);
        let cfg = KnnConfig {
            include_self: true,
            ..KnnConfig::exact(3, Metric::Euclidean)
        };
        let nn = Index::build(f, cfg).unwrap().all_neighbors();
        for v in 0..30 {
            assert_eq!(nn.get(v)[0] as usize, v);
        }
    }

    #[test]
    fn approximate_is_deterministic_and_sorted() {
        let f = gaussian(600, 10, 11);
        let cfg = KnnConfig {
            k: 10,
            num_trees: 8,
            search_budget: 100,
            seed: 7,
            ..KnnConfig::default()
        };
        let a = Index::build(f.clone(), cfg.clone()).unwrap();
        let b = Index::build(f, cfg).unwrap();
        let (na, nb) = (a.all_neighbors(), b.all_neighbors());
        assert_eq!(na, nb);
        for v in 0..na.n() {
            assert!(!na.get(v).contains(&(v as u32)));
            let d = a.distances_from_row(v, na.get(v));
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn truncate_keeps_prefix() {
        let f = gaussian(50, 4, 4);
        let idx = Index::build(f, KnnConfig::exact(10, Metric::Cosine)).unwrap();
        let ten = idx.all_neighbors();
        let three = idx.all_neighbors_k(3).unwrap();
        assert_eq!(ten.truncate(3).unwrap(), three);
    }
}
