//! Confidence intervals for concreteness scores.
//!
//! Both scores are built from means over images, so intervals come either
//! from a normal approximation or from a percentile bootstrap over images.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    None,
    Normal,
    Bootstrap,
}

impl FromStr for CiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CiMethod::None),
            "normal" => Ok(CiMethod::Normal),
            "bootstrap" => Ok(CiMethod::Bootstrap),
            other => Err(Error::InvalidConfig(format!("unknown CI method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub method: CiMethod,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            method: CiMethod::None,
            level: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

impl CiConfig {
    pub fn bootstrap(seed: u64) -> Self {
        CiConfig {
            method: CiMethod::Bootstrap,
            seed,
            ..CiConfig::default()
        }
    }

    pub fn normal() -> Self {
        CiConfig {
            method: CiMethod::Normal,
            ..CiConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence level {} is not in (0, 1)",
                self.level
            )));
        }
        if self.method == CiMethod::Bootstrap && self.resamples < MIN_RESAMPLES {
            return Err(Error::InvalidConfig(format!(
                "{} resamples requested, at least {MIN_RESAMPLES} required",
                self.resamples
            )));
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + self.level / 2.0)
    }
}

/// Per-concept RNG for resample `r`: key from the seed, stream from the
/// concept slot and resample index.
fn resample_rng(seed: u64, concept: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((concept as u64) << 32) | r as u64);
    rng
}

/// Linear interpolation between order statistics.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_unstable_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (percentile(&stats, a), percentile(&stats, 1.0 - a))
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var)
}

/// Interval for a discrete score from its per-image terms
/// `|NN^k(v) ∩ V_w|`, `v ∈ V_w`. The score is the mean of the terms divided
/// by `k |V_w| / n`.
pub fn discrete_interval(
    terms: &[f64],
    n: usize,
    k: usize,
    cfg: &CiConfig,
    concept: usize,
) -> Result<Option<(f64, f64)>> {
    cfg.validate()?;
    let m = terms.len();
    let denom = k as f64 * m as f64 / n as f64;
    match cfg.method {
        CiMethod::None => Ok(None),
        CiMethod::Normal => {
            if m < 2 {
                return Err(Error::InsufficientData(format!(
                    "normal interval needs at least 2 images, concept has {m}"
                )));
            }
            let (mean, var) = mean_and_var(terms);
            let half = cfg.z() * (var / m as f64).sqrt();
            Ok(Some(((mean - half) / denom, (mean + half) / denom)))
        }
        CiMethod::Bootstrap => {
            if m == 0 {
                return Err(Error::InsufficientData("bootstrap over zero images".into()));
            }
            let stats: Vec<f64> = (0..cfg.resamples)
                .into_par_iter()
                .map(|r| {
                    let mut rng = resample_rng(cfg.seed, concept, r);
                    let total: f64 = (0..m).map(|_| terms[rng.random_range(0..m)]).sum();
                    total / m as f64 / denom
                })
                .collect();
            Ok(Some(percentile_interval(stats, cfg.level)))
        }
    }
}

/// Interval for a continuous score `(n/k) Σ a_v / (Σ y_v)²` where
/// `a_v = Y_vt Σ_{j ∈ NN(v)} Y_jt` and `y_v = Y_vt`. Rows are the resampling
/// unit; the normal method linearizes the ratio (delta method).
pub fn continuous_interval(
    numer: &[f64],
    weights: &[f64],
    k: usize,
    cfg: &CiConfig,
    concept: usize,
) -> Result<Option<(f64, f64)>> {
    cfg.validate()?;
    let n = numer.len();
    let kf = k as f64;
    // With means ā, ȳ over rows the score is ā / (k ȳ²).
    let score_of = |a: f64, y: f64| a / (kf * y * y);
    match cfg.method {
        CiMethod::None => Ok(None),
        CiMethod::Normal => {
            if n < 2 {
                return Err(Error::InsufficientData("normal interval needs at least 2 rows".into()));
            }
            let (abar, var_a) = mean_and_var(numer);
            let (ybar, var_y) = mean_and_var(weights);
            let cov = numer
                .iter()
                .zip(weights)
                .map(|(a, y)| (a - abar) * (y - ybar))
                .sum::<f64>()
                / (n - 1) as f64;
            let ga = 1.0 / (kf * ybar * ybar);
            let gy = -2.0 * abar / (kf * ybar * ybar * ybar);
            let var = (ga * ga * var_a + 2.0 * ga * gy * cov + gy * gy * var_y) / n as f64;
            let half = cfg.z() * var.max(0.0).sqrt();
            let s = score_of(abar, ybar);
            Ok(Some((s - half, s + half)))
        }
        CiMethod::Bootstrap => {
            let stats: Vec<f64> = (0..cfg.resamples)
                .into_par_iter()
                .map(|r| {
                    let mut rng = resample_rng(cfg.seed, concept, r);
                    let (mut sa, mut sy) = (0.0, 0.0);
                    for _ in 0..n {
                        let v = rng.random_range(0..n);
                        sa += numer[v];
                        sy += weights[v];
                    }
                    if sy > 0.0 {
                        score_of(sa / n as f64, sy / n as f64)
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(Some(percentile_interval(stats, cfg.level)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_terms_give_zero_width() {
        let terms = vec![3.0; 40];
        for cfg in [CiConfig::normal(), CiConfig::bootstrap(5)] {
            let (lo, hi) = discrete_interval(&terms, 400, 10, &cfg, 0).unwrap().unwrap();
            let score = 3.0 / (10.0 * 40.0 / 400.0);
            assert_eq!((lo, hi), (score, score));
        }
    }

    #[test]
    fn bootstrap_is_seeded() {
        let terms: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let cfg = CiConfig::bootstrap(11);
        let a = discrete_interval(&terms, 500, 10, &cfg, 3).unwrap();
        let b = discrete_interval(&terms, 500, 10, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = discrete_interval(&terms, 500, 10, &CiConfig::bootstrap(12), 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_change_bootstrap() {
        let terms: Vec<f64> = (0..80).map(|i| ((i * 13) % 11) as f64).collect();
        let cfg = CiConfig::bootstrap(2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| discrete_interval(&terms, 800, 20, &cfg, 1).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn errors() {
        assert!(discrete_interval(&[1.0], 10, 2, &CiConfig::normal(), 0).is_err());
        let few = CiConfig {
            resamples: 99,
            ..CiConfig::bootstrap(0)
        };
        assert!(discrete_interval(&[1.0, 2.0], 10, 2, &few, 0).is_err());
        let bad_level = CiConfig {
            level: 1.0,
            ..CiConfig::normal()
        };
        assert!(discrete_interval(&[1.0, 2.0], 10, 2, &bad_level, 0).is_err());
    }

    #[test]
    fn normal_interval_matches_hand_computation() {
        // terms 1,2,3,4: mean 2.5, sample sd = sqrt(5/3), se = sd / 2.
        let terms = [1.0, 2.0, 3.0, 4.0];
        let (lo, hi) = discrete_interval(&terms, 40, 2, &CiConfig::normal(), 0)
            .unwrap()
            .unwrap();
        let z = 1.959963984540054;
        let half = z * (5.0f64 / 3.0).sqrt() / 2.0;
        let denom = 2.0 * 4.0 / 40.0;
        assert!((lo - (2.5 - half) / denom).abs() < 1e-9);
        assert!((hi - (2.5 + half) / denom).abs() < 1e-9);
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&xs, 0.5), 20.0);
        assert_eq!(percentile(&xs, 0.125), 5.0);
        assert_eq!(percentile(&xs, 1.0), 40.0);
    }
}
