//! Saved alignment models.
//!
//! ```text
//! "VCALN1" | kind u8 (0 np, 1 ls, 2 ns) | body
//! np:   neighbors u32 | images (u64 length, VCF1) | texts (u64 length, VCF1)
//! ls:   image-query aligner | text-query aligner
//!       aligner: direction u8 | lambda f64 | standardizer ×2 | matrix
//! ns:   alpha f64 | standardizer ×2 | image matrix | text matrix
//! standardizer: present u8 | dim u32 | mean f64… | scale f64…
//! matrix: rows u32 | cols u32 | row-major f32…
//! ```
//!
//! Weights are stored as `f32`; models produced by [`fit_model`] are rounded
//! to `f32` on creation so a reloaded model ranks identically.
//!
//! [`fit_model`]: super::fit_model

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::nonparametric::NpModel;
use super::ns::NsModel;
use super::preprocess::Standardizer;
use super::ridge::{LinearAligner, LinearMap, LsModel, MapDirection};
use super::{Aligner, QueryDirection};
use crate::binio::{ByteReader, ByteWriter};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 6] = b"VCALN1";

const MAX_DIM: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentModel {
    Np(NpModel),
    Ls(LsModel),
    Ns(NsModel),
}

impl AlignmentModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AlignmentModel::Np(_) => "np",
            AlignmentModel::Ls(_) => "ls",
            AlignmentModel::Ns(_) => "ns",
        }
    }

    /// Rounds every stored weight to `f32`.
    pub fn quantized(self) -> Self {
        let q = |m: &mut DMatrix<f64>| m.iter_mut().for_each(|v| *v = *v as f32 as f64);
        match self {
            AlignmentModel::Ls(mut ls) => {
                q(&mut ls.image_query.map.weights);
                q(&mut ls.text_query.map.weights);
                AlignmentModel::Ls(ls)
            }
            AlignmentModel::Ns(mut ns) => {
                q(&mut ns.image_proj);
                q(&mut ns.text_proj);
                AlignmentModel::Ns(ns)
            }
            np => np,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(MODEL_MAGIC);
        match self {
            AlignmentModel::Np(np) => {
                w.u8(0);
                w.len_u32(np.neighbors())?;
                for f in [np.train_images(), np.train_texts()] {
                    let block = f.to_binary_bytes()?;
                    w.u64(block.len() as u64);
                    w.bytes(&block);
                }
            }
            AlignmentModel::Ls(ls) => {
                w.u8(1);
                write_linear(&mut w, &ls.image_query)?;
                write_linear(&mut w, &ls.text_query)?;
            }
            AlignmentModel::Ns(ns) => {
                w.u8(2);
                w.f64(ns.alpha);
                write_standardizer(&mut w, &ns.image_norm)?;
                write_standardizer(&mut w, &ns.text_norm)?;
                write_matrix(&mut w, &ns.image_proj)?;
                write_matrix(&mut w, &ns.text_proj)?;
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "model file");
        if r.take(6)? != MODEL_MAGIC {
            return Err(Error::format("model file", "bad magic"));
        }
        let model = match r.u8()? {
            0 => {
                let neighbors = r.u32()? as usize;
                let mut read_block = || -> Result<FeatureMatrix> {
                    let len = r.u64()? as usize;
                    let mut block = r.take(len)?;
                    FeatureMatrix::read_binary(&mut block)
                };
                let images = read_block()?;
                let texts = read_block()?;
                AlignmentModel::Np(NpModel::new(images, texts, neighbors)?)
            }
            1 => AlignmentModel::Ls(LsModel {
                image_query: read_linear(&mut r)?,
                text_query: read_linear(&mut r)?,
            }),
            2 => {
                let alpha = r.f64()?;
                let image_norm = read_standardizer(&mut r)?;
                let text_norm = read_standardizer(&mut r)?;
                let image_proj = read_matrix(&mut r)?;
                let text_proj = read_matrix(&mut r)?;
                if image_proj.nrows() != text_proj.nrows() || image_proj.nrows() == 0 {
                    return Err(Error::format("model file", "projection shapes disagree"));
                }
                if !(alpha > 0.0) {
                    return Err(Error::format("model file", "alpha must be positive"));
                }
                AlignmentModel::Ns(NsModel {
                    image_proj,
                    text_proj,
                    alpha,
                    image_norm,
                    text_norm,
                })
            }
            tag => return Err(Error::format("model file", format!("unknown model kind {tag}"))),
        };
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Aligner for AlignmentModel {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self {
            AlignmentModel::Np(m) => m.embed(direction, images, texts),
            AlignmentModel::Ls(m) => m.embed(direction, images, texts),
            AlignmentModel::Ns(m) => m.embed(direction, images, texts),
        }
    }
}

fn write_matrix(w: &mut ByteWriter, m: &DMatrix<f64>) -> Result<()> {
    w.len_u32(m.nrows())?;
    w.len_u32(m.ncols())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.f32(m[(i, j)] as f32);
        }
    }
    Ok(())
}

fn read_matrix(r: &mut ByteReader) -> Result<DMatrix<f64>> {
    let rows = r.len(MAX_DIM)?;
    let cols = r.len(MAX_DIM)?;
    let len = rows
        .checked_mul(cols)
        .filter(|&l| l.saturating_mul(4) <= r.remaining())
        .ok_or_else(|| Error::format("model file", "matrix larger than file"))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::format("model file", "non-finite weight"));
        }
        data.push(v as f64);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn write_standardizer(w: &mut ByteWriter, s: &Option<Standardizer>) -> Result<()> {
    match s {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.len_u32(s.mean.len())?;
            s.mean.iter().for_each(|&v| w.f64(v));
            s.scale.iter().for_each(|&v| w.f64(v));
        }
    }
    Ok(())
}

fn read_standardizer(r: &mut ByteReader) -> Result<Option<Standardizer>> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let d = r.len(MAX_DIM)?;
            if d.saturating_mul(16) > r.remaining() {
                return Err(Error::format("model file", "standardizer larger than file"));
            }
            let mean = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let scale = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::format("model file", "invalid standardizer scale"));
            }
            Ok(Some(Standardizer { mean, scale }))
        }
        tag => Err(Error::format("model file", format!("bad standardizer flag {tag}"))),
    }
}

fn write_linear(w: &mut ByteWriter, a: &LinearAligner) -> Result<()> {
    w.u8(match a.map.direction {
        MapDirection::ImageToText => 0,
        MapDirection::TextToImage => 1,
    });
    w.f64(a.map.lambda);
    write_standardizer(w, &a.image_norm)?;
    write_standardizer(w, &a.text_norm)?;
    write_matrix(w, &a.map.weights)
}

fn read_linear(r: &mut ByteReader) -> Result<LinearAligner> {
    let direction = match r.u8()? {
        0 => MapDirection::ImageToText,
        1 => MapDirection::TextToImage,
        tag => return Err(Error::format("model file", format!("bad map direction {tag}"))),
    };
    let lambda = r.f64()?;
    let image_norm = read_standardizer(r)?;
    let text_norm = read_standardizer(r)?;
    let weights = read_matrix(r)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{fit_negative_sampling, Preprocess, NsConfig};

    fn features(n: usize, d: usize, salt: usize) -> FeatureMatrix {
        let data = (0..n * d).map(|i| (((i + salt) * 2654435761) % 1000) as f32 / 100.0 - 5.0).collect();
        FeatureMatrix::with_index_ids(d, data).unwrap()
    }

    fn assert_round_trip(model: AlignmentModel) {
        let bytes = model.to_bytes().unwrap();
        let back = AlignmentModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn round_trips_every_kind() {
        let (x, t) = (features(30, 4, 0), features(30, 3, 7));
        assert_round_trip(AlignmentModel::Np(NpModel::new(x.clone(), t.clone(), 2).unwrap()));
        let (xd, td) = (x.to_dmatrix(), t.to_dmatrix());
        let ls = LsModel {
            image_query: LinearAligner::fit(&xd, &td, 0.5, MapDirection::ImageToText, Preprocess::Standardize).unwrap(),
            text_query: LinearAligner::fit(&xd, &td, 2.0, MapDirection::TextToImage, Preprocess::Raw).unwrap(),
        };
        assert_round_trip(AlignmentModel::Ls(ls).quantized());
        let cfg = NsConfig { shared_dim: 2, epochs: 2, ..NsConfig::default() };
        let (ns, _) = fit_negative_sampling(&x, &t, &cfg).unwrap();
        assert_round_trip(AlignmentModel::Ns(ns).quantized());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = AlignmentModel::Np(NpModel::new(features(5, 2, 0), features(5, 2, 1), 1).unwrap());
        let bytes = model.to_bytes().unwrap();
        assert!(AlignmentModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(AlignmentModel::from_bytes(&extra).is_err());
        let mut kind = bytes;
        kind[6] = 9;
        assert!(AlignmentModel::from_bytes(&kind).is_err());
        assert!(AlignmentModel::from_bytes(b"VCANN1").is_err());
    }
}
