//! Ridge-regularized linear maps between modalities.
//!
//! The map minimizes `Σ_i ‖W x_i − y_i‖² + λ ‖W‖²_F` and is obtained from the
//! normal equations `(XᵀX + λI) Wᵀ = XᵀY`.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::preprocess::{apply_opt, Preprocess, Standardizer};
use super::{Aligner, QueryDirection};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    ImageToText,
    TextToImage,
}

impl FromStr for MapDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image_to_text" | "img2txt" => Ok(MapDirection::ImageToText),
            "text_to_image" | "txt2img" => Ok(MapDirection::TextToImage),
            other => Err(Error::InvalidConfig(format!("unknown map direction {other:?}"))),
        }
    }
}

/// Solves the ridge problem for `x` (n × source) and `y` (n × target) and
/// returns `W` (target × source).
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::RowCountMismatch {
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda = {lambda} must be finite and >= 0")));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if lambda == 0.0 && x.nrows() < x.ncols() {
        return Err(Error::Singular(format!(
            "{} rows for {} source dimensions with lambda = 0",
            x.nrows(),
            x.ncols()
        )));
    }
    let xt = x.transpose();
    let mut gram = &xt * x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = &xt * y;
    let scale = gram.diagonal().max();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("XᵀX + λI is not positive definite".into()))?;
    // Rounding can let an exactly singular Gram matrix through with a tiny pivot.
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::Singular(format!(
            "smallest Cholesky pivot {min_pivot:e} relative to scale {scale:e}"
        )));
    }
    let wt = chol.solve(&rhs);
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(wt.transpose())
}

/// `‖X Wᵀ − Y‖²_F + λ ‖W‖²_F`.
pub fn ridge_objective(w: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> f64 {
    let resid = x * w.transpose() - y;
    resid.norm_squared() + lambda * w.norm_squared()
}

/// `‖(XᵀX + λI) Wᵀ − XᵀY‖_F` and `‖XᵀY‖_F`.
pub fn normal_equation_residual(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
) -> (f64, f64) {
    let xt = x.transpose();
    let mut gram = &xt * x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = &xt * y;
    ((gram * w.transpose() - &rhs).norm(), rhs.norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// target × source.
    pub weights: DMatrix<f64>,
    pub lambda: f64,
    pub direction: MapDirection,
}

/// A linear map plus the preprocessing applied to each modality before it.
/// Similarities are cosines in the map's target space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAligner {
    pub map: LinearMap,
    pub image_norm: Option<Standardizer>,
    pub text_norm: Option<Standardizer>,
}

impl LinearAligner {
    pub fn fit(
        images: &DMatrix<f64>,
        texts: &DMatrix<f64>,
        lambda: f64,
        direction: MapDirection,
        preprocess: Preprocess,
    ) -> Result<Self> {
        let (image_norm, text_norm) = match preprocess {
            Preprocess::Standardize => (Some(Standardizer::fit(images)), Some(Standardizer::fit(texts))),
            Preprocess::Raw => (None, None),
            Preprocess::Auto => {
                return Err(Error::InvalidConfig(
                    "resolve Auto preprocessing before fitting a single map".into(),
                ))
            }
        };
        let x = apply_opt(&image_norm, images)?;
        let t = apply_opt(&text_norm, texts)?;
        let weights = match direction {
            MapDirection::ImageToText => fit_ridge(&x, &t, lambda)?,
            MapDirection::TextToImage => fit_ridge(&t, &x, lambda)?,
        };
        Ok(LinearAligner {
            map: LinearMap {
                weights,
                lambda,
                direction,
            },
            image_norm,
            text_norm,
        })
    }

    /// Image and text rows embedded in the target space.
    pub fn embed_pair(
        &self,
        images: &DMatrix<f64>,
        texts: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = apply_opt(&self.image_norm, images)?;
        let t = apply_opt(&self.text_norm, texts)?;
        let w = &self.map.weights;
        let check = |found: usize| {
            if found != w.ncols() {
                Err(Error::DimensionMismatch {
                    expected: w.ncols(),
                    found,
                })
            } else {
                Ok(())
            }
        };
        Ok(match self.map.direction {
            MapDirection::ImageToText => {
                check(x.ncols())?;
                (x * w.transpose(), t)
            }
            MapDirection::TextToImage => {
                check(t.ncols())?;
                (x, t * w.transpose())
            }
        })
    }
}

impl Aligner for LinearAligner {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (img, txt) = self.embed_pair(&images.to_dmatrix(), &texts.to_dmatrix())?;
        Ok(match direction {
            QueryDirection::ImageToText => (img, txt),
            QueryDirection::TextToImage => (txt, img),
        })
    }
}

/// Least-squares model keeping, per query direction, whichever map
/// direction and preprocessing validated better.
#[derive(Debug, Clone, PartialEq)]
pub struct LsModel {
    pub image_query: LinearAligner,
    pub text_query: LinearAligner,
}

impl Aligner for LsModel {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match direction {
            QueryDirection::ImageToText => self.image_query.embed(direction, images, texts),
            QueryDirection::TextToImage => self.text_query.embed(direction, images, texts),
        }
    }
}
