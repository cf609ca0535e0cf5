//! Seeded synthetic datasets for tests, benchmarks and the `synth` command.
//!
//! * [`gaussian_features`]: i.i.d. standard normal features.
//! * [`two_clusters`]: one concept on a tight cluster and one spread
//!   uniformly, for checking that concreteness separates them.
//! * [`benchmark`]: clustered images plus uniform background, words whose
//!   purity (share of images drawn from a home cluster) varies continuously
//!   and independently of frequency, and text features that follow the image
//!   only as strongly as the instance's words are visual.
//! * [`linear_bundle`]: text is a noisy linear function of images that live
//!   near a low-dimensional subspace.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptIndex, FeatureMatrix, TokenRecord};
use crate::error::{Error, Result};

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed, 0);
    let data = (0..n * dim).map(|_| normal(&mut r) as f32).collect();
    FeatureMatrix::with_index_ids(dim, data).expect("finite gaussian features")
}

#[derive(Debug, Clone)]
pub struct TwoClusters {
    pub features: FeatureMatrix,
    /// Words `clustered` and `uniform`.
    pub concepts: ConceptIndex,
}

/// `n` background points in a wide Gaussian plus a tight cluster of
/// `support` points; `clustered` tags the cluster, `uniform` tags `support`
/// random background points.
pub fn two_clusters(n: usize, dim: usize, support: usize, seed: u64) -> Result<TwoClusters> {
    if 2 * support > n || support == 0 {
        return Err(Error::InvalidConfig(format!("support {support} must be in 1..={}", n / 2)));
    }
    let mut r = rng(seed, 1);
    let center: Vec<f64> = (0..dim).map(|_| 4.0 * normal(&mut r)).collect();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for c in &center {
            let v = if i < support { c + 0.3 * normal(&mut r) } else { 4.0 * normal(&mut r) };
            data.push(v as f32);
        }
    }
    let features = FeatureMatrix::with_index_ids(dim, data)?;
    let mut background: Vec<usize> = (support..n).collect();
    background.shuffle(&mut r);
    let assignments = (0..support)
        .map(|i| (i, "clustered"))
        .chain(background[..support].iter().map(|&i| (i, "uniform")));
    let concepts = ConceptIndex::from_assignments(n, assignments, 1)?;
    Ok(TwoClusters { features, concepts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub clusters: usize,
    /// Share of images drawn uniformly from a box instead of a cluster.
    pub background_fraction: f64,
    pub words: usize,
    /// Word support is drawn uniformly from this range (fraction of `n`).
    pub min_frequency: f64,
    pub max_frequency: f64,
    /// Consecutive instances sharing a group id ("pages of a book").
    pub group_size: usize,
    /// Standard deviation of the noise added to text features.
    pub text_noise: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n: 3000,
            image_dim: 32,
            text_dim: 24,
            clusters: 20,
            background_fraction: 0.2,
            words: 60,
            min_frequency: 0.02,
            max_frequency: 0.08,
            group_size: 10,
            text_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub images: FeatureMatrix,
    pub texts: FeatureMatrix,
    pub records: Vec<TokenRecord>,
    pub vocab: Vec<String>,
    /// Ground-truth purity per word, aligned with `vocab`.
    pub purity: Vec<f64>,
    /// Per-instance weight of the image-driven part of its text.
    pub groundedness: Vec<f64>,
    pub groups: Vec<String>,
}

impl Benchmark {
    pub fn concepts(&self, min_support: usize) -> Result<ConceptIndex> {
        crate::dataset::concepts_from_records(&self.records, self.images.ids(), min_support)
    }
}

pub fn benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.n < 10 || cfg.clusters == 0 || cfg.words < 2 || cfg.image_dim == 0 || cfg.text_dim == 0 {
        return Err(Error::InvalidConfig("benchmark needs n ≥ 10, ≥ 1 cluster, ≥ 2 words".into()));
    }
    if !(0.0 < cfg.min_frequency && cfg.min_frequency <= cfg.max_frequency && cfg.max_frequency <= 1.0) {
        return Err(Error::InvalidConfig("need 0 < min_frequency ≤ max_frequency ≤ 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.background_fraction) || cfg.group_size == 0 {
        return Err(Error::InvalidConfig("background_fraction must be in [0, 1) and group_size ≥ 1".into()));
    }
    let (n, d, dt) = (cfg.n, cfg.image_dim, cfg.text_dim);

    // Images.
    let mut r = rng(cfg.seed, 2);
    let centers: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| (0..d).map(|_| 3.0 * normal(&mut r)).collect())
        .collect();
    let mut cluster_of = vec![None; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.clusters];
    let mut x = vec![0.0f64; n * d];
    for i in 0..n {
        let row = &mut x[i * d..(i + 1) * d];
        if r.random::<f64>() < cfg.background_fraction {
            row.iter_mut().for_each(|v| *v = r.random_range(-6.0..6.0));
        } else {
            let c = r.random_range(0..cfg.clusters);
            cluster_of[i] = Some(c);
            members[c].push(i);
            row.iter_mut().zip(&centers[c]).for_each(|(v, m)| *v = m + normal(&mut r));
        }
    }

    // Words: purity on an even grid, frequency shuffled independently.
    let mut r = rng(cfg.seed, 3);
    let purity: Vec<f64> = (0..cfg.words).map(|w| w as f64 / (cfg.words - 1) as f64).collect();
    let mut freq: Vec<f64> = (0..cfg.words)
        .map(|w| cfg.min_frequency + (cfg.max_frequency - cfg.min_frequency) * w as f64 / (cfg.words - 1) as f64)
        .collect();
    freq.shuffle(&mut r);
    let nonempty: Vec<usize> = (0..cfg.clusters).filter(|&c| !members[c].is_empty()).collect();
    let vocab: Vec<String> = (0..cfg.words).map(|w| format!("w{w:03}")).collect();
    let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); n];
    for w in 0..cfg.words {
        let home = &members[nonempty[w % nonempty.len()]];
        let target = ((freq[w] * n as f64).round() as usize).max(1);
        let mut chosen = std::collections::BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < target && attempts < 50 * target {
            attempts += 1;
            let i = if r.random::<f64>() < purity[w] {
                home[r.random_range(0..home.len())]
            } else {
                r.random_range(0..n)
            };
            chosen.insert(i);
        }
        chosen.into_iter().for_each(|i| tokens[i].push(w));
    }

    // Texts: t = g·M x + (1 − g)·z + ε with g the mean purity of the words.
    let mut r = rng(cfg.seed, 4);
    let scale = 1.0 / (d as f64).sqrt();
    let m: Vec<f64> = (0..dt * d).map(|_| normal(&mut r) * scale).collect();
    let mut x_mean = vec![0.0; d];
    for i in 0..n {
        x_mean.iter_mut().zip(&x[i * d..]).for_each(|(a, v)| *a += v / n as f64);
    }
    let spread = {
        // Match the abstract part to the typical size of M·x.
        let var: f64 = (0..n * d).map(|p| (x[p] - x_mean[p % d]).powi(2)).sum::<f64>() / (n * d) as f64;
        var.sqrt()
    };
    let mut groundedness = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n * dt);
    for i in 0..n {
        let g = if tokens[i].is_empty() {
            0.0
        } else {
            tokens[i].iter().map(|&w| purity[w]).sum::<f64>() / tokens[i].len() as f64
        };
        groundedness.push(g);
        let xi: Vec<f64> = (0..d).map(|k| x[i * d + k] - x_mean[k]).collect();
        for o in 0..dt {
            let mx: f64 = (0..d).map(|k| m[o * d + k] * xi[k]).sum();
            let z = spread * normal(&mut r);
            t.push((g * mx + (1.0 - g) * z + cfg.text_noise * normal(&mut r)) as f32);
        }
    }

    let ids: Vec<String> = (0..n).map(|i| format!("img{i:05}")).collect();
    let records = tokens
        .iter()
        .enumerate()
        .map(|(i, ws)| TokenRecord {
            image: ids[i].clone(),
            tokens: ws.iter().map(|&w| vocab[w].clone()).collect(),
        })
        .collect();
    let groups = (0..n).map(|i| format!("book{:04}", i / cfg.group_size)).collect();
    Ok(Benchmark {
        images: FeatureMatrix::new(ids.clone(), d, x.iter().map(|&v| v as f32).collect())?,
        texts: FeatureMatrix::new(ids, dt, t)?,
        records,
        vocab,
        purity,
        groundedness,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBundleConfig {
    pub n: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Noise on images off the latent subspace, and on texts.
    pub noise: f64,
    pub seed: u64,
}

impl Default for LinearBundleConfig {
    fn default() -> Self {
        LinearBundleConfig {
            n: 1000,
            latent_dim: 6,
            image_dim: 32,
            text_dim: 24,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Images `x = L z + noise` with `z` in a low-dimensional latent space and
/// texts `t = M x + noise`.
pub fn linear_bundle(cfg: &LinearBundleConfig) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if cfg.latent_dim == 0 || cfg.image_dim == 0 || cfg.text_dim == 0 || cfg.n == 0 {
        return Err(Error::InvalidConfig("linear bundle dimensions must be positive".into()));
    }
    let (d, dt, q) = (cfg.image_dim, cfg.text_dim, cfg.latent_dim);
    let mut r = rng(cfg.seed, 5);
    let l: Vec<f64> = (0..d * q).map(|_| normal(&mut r)).collect();
    let m: Vec<f64> = (0..dt * d).map(|_| normal(&mut r) / (d as f64).sqrt()).collect();
    let mut x = Vec::with_capacity(cfg.n * d);
    let mut t = Vec::with_capacity(cfg.n * dt);
    for _ in 0..cfg.n {
        let z: Vec<f64> = (0..q).map(|_| normal(&mut r)).collect();
        let xi: Vec<f64> = (0..d)
            .map(|a| (0..q).map(|b| l[a * q + b] * z[b]).sum::<f64>() + cfg.noise * normal(&mut r))
            .collect();
        for o in 0..dt {
            let v: f64 = (0..d).map(|k| m[o * d + k] * xi[k]).sum();
            t.push((v + cfg.noise * normal(&mut r)) as f32);
        }
        x.extend(xi.iter().map(|&v| v as f32));
    }
    Ok((
        FeatureMatrix::with_index_ids(d, x)?,
        FeatureMatrix::with_index_ids(dt, t)?,
    ))
}
