//! Image/text alignment models and bidirectional retrieval evaluation.
//!
//! Three aligners are provided: a nonparametric nearest-neighbor baseline
//! ([`NpModel`]), ridge-regularized linear maps in either direction
//! ([`LsModel`]), and a two-tower linear embedding trained with a
//! negative-sampling hinge loss ([`NsModel`]). All of them expose the same
//! [`Aligner`] surface so [`evaluate_retrieval`] can rank candidates in both
//! query directions.

mod cv;
mod evaluate;
mod model_io;
mod nonparametric;
mod ns;
mod preprocess;
mod ridge;
mod train;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, Split};
use crate::error::{Error, Result};

pub use cv::{audit_groups, group_kfold, holdout, kfold, FoldAudit};
pub use evaluate::{
    evaluate_retrieval, ranks_from_similarity, read_retrieval_csv, RetrievalResult, DEFAULT_P_VALUES,
};
pub use model_io::{AlignmentModel, MODEL_MAGIC};
pub use nonparametric::{np_baseline, NpModel};
pub use ns::{fit_negative_sampling, hinge, pair_loss, NsConfig, NsHistory, NsModel};
pub use preprocess::{Preprocess, Standardizer};
pub use ridge::{
    fit_ridge, normal_equation_residual, ridge_objective, LinearAligner, LinearMap, LsModel,
    MapDirection,
};
pub use train::{
    cross_validate, fit_least_squares, fit_model, AlgoConfig, CvReport, FoldResult, LsConfig,
    NpConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryDirection {
    /// Image queries ranking text candidates.
    ImageToText,
    /// Text queries ranking image candidates.
    TextToImage,
}

/// Anything that places queries and candidates in a common space where
/// cosine similarity ranks candidates.
pub trait Aligner {
    /// `(queries, candidates)`, one row per instance, for the given direction.
    /// Row `i` of both refers to instance `i`.
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Identity alignment: images and texts already live in the same space.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAligner;

impl Aligner for IdentityAligner {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if images.dim() != texts.dim() {
            return Err(Error::DimensionMismatch {
                expected: images.dim(),
                found: texts.dim(),
            });
        }
        let (x, t) = (images.to_dmatrix(), texts.to_dmatrix());
        Ok(match direction {
            QueryDirection::ImageToText => (x, t),
            QueryDirection::TextToImage => (t, x),
        })
    }
}

/// Text features aligned row-by-row with an image feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureMatrix(FeatureMatrix);

impl TextFeatureMatrix {
    pub fn aligned_with(texts: FeatureMatrix, images: &FeatureMatrix) -> Result<Self> {
        if texts.n() != images.n() {
            return Err(Error::RowCountMismatch {
                expected: images.n(),
                found: texts.n(),
            });
        }
        if let Some((a, b)) = images.ids().iter().zip(texts.ids()).find(|(a, b)| a != b) {
            return Err(Error::InvalidConfig(format!(
                "text row {b:?} is not aligned with image row {a:?}"
            )));
        }
        Ok(TextFeatureMatrix(texts))
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.0
    }
}

/// Paired image/text features with an optional split and optional group ids
/// for grouped holdout.
#[derive(Debug, Clone)]
pub struct PairedBundle {
    pub images: FeatureMatrix,
    pub texts: TextFeatureMatrix,
    pub split: Option<Split>,
    pub groups: Option<Vec<String>>,
}

impl PairedBundle {
    pub fn new(images: FeatureMatrix, texts: FeatureMatrix) -> Result<Self> {
        let texts = TextFeatureMatrix::aligned_with(texts, &images)?;
        Ok(PairedBundle {
            images,
            texts,
            split: None,
            groups: None,
        })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        Split::new(split.train().to_vec(), split.test().to_vec(), self.n())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(Error::RowCountMismatch {
                expected: self.n(),
                found: groups.len(),
            });
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.images.n()
    }

    pub fn split(&self) -> Result<&Split> {
        self.split.as_ref().ok_or(Error::MissingSplit)
    }

    pub fn texts(&self) -> &FeatureMatrix {
        self.texts.features()
    }

    pub fn images_at(&self, rows: &[usize]) -> FeatureMatrix {
        self.images.select(rows)
    }

    pub fn texts_at(&self, rows: &[usize]) -> FeatureMatrix {
        self.texts().select(rows)
    }
}
