use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature preprocessing before alignment. `Auto` tries both and keeps
/// whichever validates better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    Raw,
    Standardize,
    #[default]
    Auto,
}

impl Preprocess {
    pub fn candidates(self) -> &'static [Preprocess] {
        match self {
            Preprocess::Raw => &[Preprocess::Raw],
            Preprocess::Standardize => &[Preprocess::Standardize],
            Preprocess::Auto => &[Preprocess::Raw, Preprocess::Standardize],
        }
    }
}

impl FromStr for Preprocess {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Preprocess::Raw),
            "standardize" | "zscore" => Ok(Preprocess::Standardize),
            "auto" => Ok(Preprocess::Auto),
            other => Err(Error::InvalidConfig(format!("unknown preprocessing {other:?}"))),
        }
    }
}

/// Zero-mean / unit-variance transform with statistics from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            // Constant columns pass through centered.
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}

pub(crate) fn apply_opt(norm: &Option<Standardizer>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match norm {
        Some(s) => s.apply(x),
        None => Ok(x.clone()),
    }
}
