//! Two-tower linear embedding trained with a negative-sampling hinge loss.
//!
//! Images and texts are projected into a shared space by `A` and `B`;
//! `s(t, v) = cos(B t, A v)`. For each positive pair `i` one negative index
//! `j ≠ i` is drawn uniformly and the pair contributes
//! `h(s(tᵢ,vᵢ), s(tᵢ,vⱼ)) + h(s(tᵢ,vᵢ), s(tⱼ,vᵢ))` with
//! `h(p, n) = max(0, α − p + n)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cv::holdout;
use super::evaluate::evaluate_retrieval;
use super::preprocess::{apply_opt, Preprocess, Standardizer};
use super::{Aligner, QueryDirection};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub fn hinge(alpha: f64, positive: f64, negative: f64) -> f64 {
    (alpha - positive + negative).max(0.0)
}

/// Loss of one positive pair against its sampled negatives.
pub fn pair_loss(alpha: f64, positive: f64, neg_image: f64, neg_text: f64) -> f64 {
    hinge(alpha, positive, neg_image) + hinge(alpha, positive, neg_text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsConfig {
    pub shared_dim: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    /// Fraction of the training rows held out for early stopping.
    pub validation_fraction: f64,
    pub preprocess: Preprocess,
}

impl Default for NsConfig {
    fn default() -> Self {
        NsConfig {
            shared_dim: 64,
            alpha: 0.2,
            epochs: 60,
            batch: 32,
            lr: 0.5,
            seed: 0,
            patience: 10,
            validation_fraction: 0.1,
            preprocess: Preprocess::Standardize,
        }
    }
}

impl NsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.shared_dim == 0 {
            return bad("shared_dim must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction = {} is not in [0, 1)",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsModel {
    /// shared × image dim.
    pub image_proj: DMatrix<f64>,
    /// shared × text dim.
    pub text_proj: DMatrix<f64>,
    pub alpha: f64,
    pub image_norm: Option<Standardizer>,
    pub text_norm: Option<Standardizer>,
}

impl NsModel {
    pub fn shared_dim(&self) -> usize {
        self.image_proj.nrows()
    }

    /// Image and text rows in the shared space.
    pub fn project(
        &self,
        images: &DMatrix<f64>,
        texts: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = apply_opt(&self.image_norm, images)?;
        let t = apply_opt(&self.text_norm, texts)?;
        for (found, expected) in [(x.ncols(), self.image_proj.ncols()), (t.ncols(), self.text_proj.ncols())] {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        Ok((x * self.image_proj.transpose(), t * self.text_proj.transpose()))
    }
}

impl Aligner for NsModel {
    fn embed(
        &self,
        direction: QueryDirection,
        images: &FeatureMatrix,
        texts: &FeatureMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (a, b) = self.project(&images.to_dmatrix(), &texts.to_dmatrix())?;
        Ok(match direction {
            QueryDirection::ImageToText => (a, b),
            QueryDirection::TextToImage => (b, a),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NsHistory {
    /// Mean pair loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation R@1% per epoch (empty without a validation set).
    pub validation_recall: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub preprocess: Option<Preprocess>,
}

/// Cosine of two vectors and its gradients with respect to each.
fn cosine_grad(a: &DVector<f64>, b: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let (na, nb) = (a.norm(), b.norm());
    if !(na.is_finite() && nb.is_finite()) {
        return (f64::NAN, DVector::zeros(a.len()), DVector::zeros(b.len()));
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, DVector::zeros(a.len()), DVector::zeros(b.len()));
    }
    let cos = a.dot(b) / (na * nb);
    let ga = b / (na * nb) - a * (cos / (na * na));
    let gb = a / (na * nb) - b * (cos / (nb * nb));
    (cos, ga, gb)
}

struct Trainer<'a> {
    x: &'a DMatrix<f64>,
    t: &'a DMatrix<f64>,
    alpha: f64,
}

impl Trainer<'_> {
    /// Loss and accumulated gradients for a batch of `(positive, negative)`.
    fn batch(
        &self,
        a_mat: &DMatrix<f64>,
        b_mat: &DMatrix<f64>,
        pairs: &[(usize, usize)],
    ) -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let mut ga_mat = DMatrix::zeros(a_mat.nrows(), a_mat.ncols());
        let mut gb_mat = DMatrix::zeros(b_mat.nrows(), b_mat.ncols());
        let mut loss = 0.0;
        let img = |r: usize| DVector::from_iterator(self.x.ncols(), self.x.row(r).iter().copied());
        let txt = |r: usize| DVector::from_iterator(self.t.ncols(), self.t.row(r).iter().copied());
        for &(i, j) in pairs {
            let (vi, vj, ti, tj) = (img(i), img(j), txt(i), txt(j));
            let (ai, aj) = (a_mat * &vi, a_mat * &vj);
            let (bi, bj) = (b_mat * &ti, b_mat * &tj);
            let (s_pos, ga_i, gb_i) = cosine_grad(&ai, &bi);
            // Negative image for text i, and negative text for image i.
            let (s_ni, ga_j, gb_i2) = cosine_grad(&aj, &bi);
            let (s_nt, ga_i2, gb_j) = cosine_grad(&ai, &bj);
            if !(s_pos.is_finite() && s_ni.is_finite() && s_nt.is_finite()) {
                // `max` would silently turn NaN into a zero loss.
                return (f64::NAN, ga_mat, gb_mat);
            }
            let h1 = hinge(self.alpha, s_pos, s_ni);
            let h2 = hinge(self.alpha, s_pos, s_nt);
            loss += h1 + h2;
            let active = (h1 > 0.0) as u8 as f64 + (h2 > 0.0) as u8 as f64;
            if active == 0.0 {
                continue;
            }
            // d/d(embedding) of the active terms.
            let mut da_i = -&ga_i * active;
            let mut db_i = -&gb_i * active;
            if h1 > 0.0 {
                db_i += gb_i2;
                ga_mat += ga_j * vj.transpose();
            }
            if h2 > 0.0 {
                da_i += ga_i2;
                gb_mat += gb_j * tj.transpose();
            }
            ga_mat += da_i * vi.transpose();
            gb_mat += db_i * ti.transpose();
        }
        (loss, ga_mat, gb_mat)
    }
}

fn init_projection(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Validation criterion: R@1%, then mean rank (lower is better) as a
/// tie-breaker so small validation sets still discriminate.
pub(crate) fn validation_score(model: &dyn Aligner, images: &FeatureMatrix, texts: &FeatureMatrix) -> Result<(f64, f64)> {
    let res = evaluate_retrieval(model, images, texts)?;
    let mean_r = res.r.iter().sum::<f64>() / res.r.len() as f64;
    Ok((res.recall_at(1.0)?, -mean_r))
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

fn train_once(
    images: &FeatureMatrix,
    texts: &FeatureMatrix,
    train_rows: &[usize],
    val_rows: &[usize],
    config: &NsConfig,
    preprocess: Preprocess,
) -> Result<(NsModel, NsHistory, Option<(f64, f64)>)> {
    let raw_x = images.to_dmatrix_rows(train_rows);
    let raw_t = texts.to_dmatrix_rows(train_rows);
    let (image_norm, text_norm) = match preprocess {
        Preprocess::Standardize => (Some(Standardizer::fit(&raw_x)), Some(Standardizer::fit(&raw_t))),
        _ => (None, None),
    };
    let x = apply_opt(&image_norm, &raw_x)?;
    let t = apply_opt(&text_norm, &raw_t)?;
    let m = train_rows.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = NsModel {
        image_proj: init_projection(config.shared_dim, x.ncols(), &mut rng),
        text_proj: init_projection(config.shared_dim, t.ncols(), &mut rng),
        alpha: config.alpha,
        image_norm,
        text_norm,
    };
    let val = (!val_rows.is_empty()).then(|| (images.select(val_rows), texts.select(val_rows)));
    let trainer = Trainer {
        x: &x,
        t: &t,
        alpha: config.alpha,
    };

    let mut history = NsHistory {
        preprocess: Some(preprocess),
        ..NsHistory::default()
    };
    let mut best: Option<((f64, f64), NsModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..m).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        // Negatives are redrawn every epoch, never equal to the positive.
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .map(|&i| {
                let j = rng.random_range(0..m - 1);
                (i, if j >= i { j + 1 } else { j })
            })
            .collect();
        let mut total = 0.0;
        for chunk in pairs.chunks(config.batch) {
            let (loss, ga, gb) = trainer.batch(&model.image_proj, &model.text_proj, chunk);
            if !loss.is_finite() || ga.iter().chain(gb.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { step });
            }
            let eta = config.lr / chunk.len() as f64;
            model.image_proj -= ga * eta;
            model.text_proj -= gb * eta;
            total += loss;
            step += 1;
        }
        history.epoch_loss.push(total / m as f64);

        match &val {
            Some((vx, vt)) => {
                let score = validation_score(&model, vx, vt)?;
                history.validation_recall.push(score.0);
                if best.as_ref().is_none_or(|(b, _)| better(score, *b)) {
                    best = Some((score, model.clone()));
                    history.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if config.patience > 0 && since_best >= config.patience {
                        break;
                    }
                }
            }
            None => history.best_epoch = epoch,
        }
    }
    Ok(match best {
        Some((score, kept)) => (kept, history, Some(score)),
        None => (model, history, None),
    })
}

/// Trains on all rows of `images`/`texts` (row-aligned training pairs).
pub fn fit_negative_sampling(
    images: &FeatureMatrix,
    texts: &FeatureMatrix,
    config: &NsConfig,
) -> Result<(NsModel, NsHistory)> {
    config.validate()?;
    if images.n() != texts.n() {
        return Err(Error::RowCountMismatch {
            expected: images.n(),
            found: texts.n(),
        });
    }
    if images.n() < 2 {
        return Err(Error::InsufficientData(
            "negative sampling needs at least two training pairs".into(),
        ));
    }
    let all: Vec<usize> = (0..images.n()).collect();
    let (train_rows, val_rows) = if config.validation_fraction > 0.0 && images.n() >= 20 {
        holdout(&all, config.validation_fraction, config.seed)?
    } else {
        (all, Vec::new())
    };
    let mut best: Option<(Option<(f64, f64)>, NsModel, NsHistory)> = None;
    for &prep in config.preprocess.candidates() {
        let (model, history, score) = train_once(images, texts, &train_rows, &val_rows, config, prep)?;
        let replace = match (&best, score) {
            (None, _) => true,
            (Some((Some(b), _, _)), Some(s)) => better(s, *b),
            _ => false,
        };
        if replace {
            best = Some((score, model, history));
        }
    }
    let (_, model, history) = best.expect("at least one preprocessing candidate");
    Ok((model, history))
}
