//! Nearest-neighbor baseline: no training, just lookups into the training
//! pairs.
//!
//! A test image borrows the text of its nearest training image(s) and ranks
//! test texts by cosine similarity to it; text queries do the same through
//! the text space.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::evaluate::{evaluate_retrieval, RetrievalResult};
use super::{Aligner, PairedBundle, QueryDirection};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::knn::{Index, KnnConfig, Metric};

#[derive(Debug, Clone)]
pub struct NpModel {
    neighbors: usize,
    image_index: Index,
    text_index: Index,
}

impl PartialEq for NpModel {
    fn eq(&self, other: &Self) -> bool {
        self.neighbors == other.neighbors
            && self.image_index.features() == other.image_index.features()
            && self.text_index.features() == other.text_index.features()
    }
}

impl NpModel {
    /// `neighbors` training pairs are averaged per query (1 = plain nearest
    /// neighbor).
    pub fn new(train_images: FeatureMatrix, train_texts: FeatureMatrix, neighbors: usize) -> Result<Self> {
        if train_images.n() != train_texts.n() {
            return Err(Error::RowCountMismatch {
                expected: train_images.n(),
                found: train_texts.n(),
            });
        }
        if neighbors == 0 || neighbors > train_images.n() {
            return Err(Error::InvalidConfig(format!(
                "neighbors = {neighbors} must be in 1..={}",
                train_images.n()
            )));
        }
        let cfg = KnnConfig::exact(neighbors, Metric::Cosine);
        Ok(NpModel {
            neighbors,
            image_index: Index::build(train_images, cfg.clone())?,
            text_index: Index::build(train_texts, cfg)?,
        })
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn train_images(&self) -> &FeatureMatrix {
        self.image_index.features()
    }

    pub fn train_texts(&self) -> &FeatureMatrix {
        self.text_index.features()
    }

    /// For each query row, the mean of the `other` rows paired with its
    /// nearest training rows in `index`.
    fn borrow(&self, index: &Index, other: &FeatureMatrix, queries: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if queries.dim() != index.dim() {
            return Err(Error::DimensionMismatch {
                expected: index.dim(),
                found: queries.dim(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..queries.n())
            .into_par_iter()
            .map(|q| {
                let hits = index.query(queries.row(q), self.neighbors)?;
                let mut acc = vec![0.0; other.dim()];
                for &h in &hits {
                    let row = other.row(h);
                    // Unit-normalize so each borrowed neighbor weighs equally.
                    let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64 / norm);
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(queries.n(), other.dim(), |i, j| rows[i][j]))
    }
}

impl Aligner for NpModel {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match direction {
            QueryDirection::ImageToText => {
                let q = self.borrow(&self.image_index, self.train_texts(), images)?;
                check_dim(texts.dim(), self.train_texts().dim())?;
                Ok((q, texts.to_dmatrix()))
            }
            QueryDirection::TextToImage => {
                let q = self.borrow(&self.text_index, self.train_images(), texts)?;
                check_dim(images.dim(), self.train_images().dim())?;
                Ok((q, images.to_dmatrix()))
            }
        }
    }
}

fn check_dim(found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Builds the baseline from the bundle's training rows and ranks its test rows.
pub fn np_baseline(bundle: &PairedBundle, neighbors: usize) -> Result<RetrievalResult> {
    let split = bundle.split()?;
    let model = NpModel::new(bundle.images_at(split.train()), bundle.texts_at(split.train()), neighbors)?;
    evaluate_retrieval(&model, &bundle.images_at(split.test()), &bundle.texts_at(split.test()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::with_index_ids(d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn duplicated_training_pair_ranks_first() {
        let images = random(40, 5, 1);
        let texts = random(40, 7, 2);
        let train: Vec<usize> = (0..30).collect();
        let model = NpModel::new(images.select(&train), texts.select(&train), 1).unwrap();
        // Test set: a copy of training pair 4 plus unrelated items.
        let mut test_rows = vec![4];
        test_rows.extend(30..40);
        let res = evaluate_retrieval(&model, &images.select(&test_rows), &texts.select(&test_rows)).unwrap();
        assert_eq!(res.rank_img2txt[0], 100.0 / 11.0);
        assert_eq!(res.rank_txt2img[0], 100.0 / 11.0);
    }

    #[test]
    fn missing_split_is_an_error() {
        let b = PairedBundle::new(random(10, 2, 1), random(10, 2, 2)).unwrap();
        assert!(matches!(np_baseline(&b, 1), Err(Error::MissingSplit)));
    }

    #[test]
    fn random_features_are_near_chance() {
        let mut total = 0.0;
        for seed in 0..5 {
            let b = PairedBundle::new(random(600, 8, 10 + seed), random(600, 8, 20 + seed))
                .unwrap()
                .with_split(Split::new((0..400).collect(), (400..600).collect(), 600).unwrap())
                .unwrap();
            total += np_baseline(&b, 1).unwrap().recall_at(1.0).unwrap();
        }
        let mean = total / 5.0;
        assert!((0.2..=3.0).contains(&mean), "{mean}");
    }
}
