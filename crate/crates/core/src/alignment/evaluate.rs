//! Bidirectional retrieval ranks and recall-at-p-percent.
//!
//! For each test instance, the true counterpart's 1-based position among all
//! test candidates is turned into a percentile `100 · position / m`. Ties in
//! similarity count against the true counterpart. A direction "hits" at `p`
//! when that percentile is at most `p`; `R@p%` averages the hit rates of the
//! two directions. The per-instance rank `r_i` is the mean of the two
//! directional percentiles.

use std::io::{Read, Write};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Aligner, QueryDirection};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_P_VALUES: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub instance_ids: Vec<String>,
    /// Percentile rank in `(0, 100]` of the true text for each image query.
    pub rank_img2txt: Vec<f64>,
    /// Percentile rank of the true image for each text query.
    pub rank_txt2img: Vec<f64>,
    /// Mean of the two directional percentiles.
    pub r: Vec<f64>,
    /// Instances dropped because an embedding was all zeros.
    pub excluded: Vec<String>,
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("p = {p} is not in (0, 100]")))
    }
}

fn fraction(xs: &[f64], p: f64) -> f64 {
    xs.iter().filter(|&&x| x <= p).count() as f64 / xs.len() as f64
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    /// `𝕀[r_i ≤ p]`.
    pub fn hits(&self, p: f64) -> Vec<bool> {
        self.r.iter().map(|&r| r <= p).collect()
    }

    /// Hit rate of one query direction at `p`, as a percentage.
    pub fn recall_direction(&self, direction: QueryDirection, p: f64) -> Result<f64> {
        check_p(p)?;
        let ranks = match direction {
            QueryDirection::ImageToText => &self.rank_img2txt,
            QueryDirection::TextToImage => &self.rank_txt2img,
        };
        Ok(100.0 * fraction(ranks, p))
    }

    /// `R@p%`: mean of the two directional hit rates, as a percentage.
    pub fn recall_at(&self, p: f64) -> Result<f64> {
        Ok(0.5
            * (self.recall_direction(QueryDirection::ImageToText, p)?
                + self.recall_direction(QueryDirection::TextToImage, p)?))
    }

    /// Fraction of instances whose mean rank `r_i` is within `p`, as a percentage.
    pub fn instance_hit_rate(&self, p: f64) -> Result<f64> {
        check_p(p)?;
        Ok(100.0 * fraction(&self.r, p))
    }

    pub fn summary(&self, p_values: &[f64]) -> Result<Vec<(f64, f64)>> {
        p_values.iter().map(|&p| Ok((p, self.recall_at(p)?))).collect()
    }

    /// Concatenates per-fold results (instance order follows the folds).
    pub fn concat(parts: &[RetrievalResult]) -> RetrievalResult {
        let mut out = RetrievalResult {
            instance_ids: Vec::new(),
            rank_img2txt: Vec::new(),
            rank_txt2img: Vec::new(),
            r: Vec::new(),
            excluded: Vec::new(),
        };
        for p in parts {
            out.instance_ids.extend_from_slice(&p.instance_ids);
            out.rank_img2txt.extend_from_slice(&p.rank_img2txt);
            out.rank_txt2img.extend_from_slice(&p.rank_txt2img);
            out.r.extend_from_slice(&p.r);
            out.excluded.extend_from_slice(&p.excluded);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::format("evaluation csv", e.to_string());
        wtr.write_record([
            "instance_id",
            "rank_img2txt",
            "rank_txt2img",
            "r_i",
            "hit@1",
            "hit@5",
            "hit@10",
        ])
        .map_err(err)?;
        for i in 0..self.len() {
            let hit = |p: f64| if self.r[i] <= p { "1" } else { "0" };
            wtr.write_record([
                self.instance_ids[i].clone(),
                self.rank_img2txt[i].to_string(),
                self.rank_txt2img[i].to_string(),
                self.r[i].to_string(),
                hit(1.0).into(),
                hit(5.0).into(),
                hit(10.0).into(),
            ])
            .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn read_retrieval_csv<R: Read>(reader: R) -> Result<RetrievalResult> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("evaluation csv", e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format("evaluation csv", format!("missing column {name}")))
    };
    let (ci, ca, cb, cr) = (col("instance_id")?, col("rank_img2txt")?, col("rank_txt2img")?, col("r_i")?);
    let mut out = RetrievalResult::concat(&[]);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("evaluation csv", e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::format("evaluation csv", format!("row {row}: bad number")))
        };
        out.instance_ids.push(rec[ci].to_string());
        out.rank_img2txt.push(num(ca)?);
        out.rank_txt2img.push(num(cb)?);
        out.r.push(num(cr)?);
    }
    Ok(out)
}

/// Percentile rank of the diagonal entry in each row of `sim`
/// (`sim[(i, j)]` = similarity of query `i` to candidate `j`).
pub fn ranks_from_similarity(sim: &DMatrix<f64>) -> Vec<f64> {
    let m = sim.nrows();
    // Columns are contiguous; work on the transpose so each query is one column.
    let by_query = sim.transpose();
    (0..m)
        .into_par_iter()
        .map(|i| {
            let col = by_query.column(i);
            let truth = col[i];
            let ahead = col
                .iter()
                .enumerate()
                .filter(|&(j, &s)| j != i && s >= truth)
                .count();
            100.0 * (ahead + 1) as f64 / m as f64
        })
        .collect()
}

fn row_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm()).collect()
}

fn unit_rows(x: &DMatrix<f64>, keep: &[usize], norms: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), x.ncols(), |i, j| x[(keep[i], j)] / norms[keep[i]])
}

/// Ranks every test instance in both directions. `images` and `texts` are the
/// test rows, aligned by position.
pub fn evaluate_retrieval<A: Aligner + ?Sized>(
    model: &A,
    images: &FeatureMatrix,
    texts: &FeatureMatrix,
) -> Result<RetrievalResult> {
    if images.n() != texts.n() {
        return Err(Error::RowCountMismatch {
            expected: images.n(),
            found: texts.n(),
        });
    }
    let (q_it, c_it) = model.embed(QueryDirection::ImageToText, images, texts)?;
    let (q_ti, c_ti) = model.embed(QueryDirection::TextToImage, images, texts)?;
    let mats = [&q_it, &c_it, &q_ti, &c_ti];
    if let Some(bad) = mats.iter().find(|m| m.nrows() != images.n()) {
        return Err(Error::RowCountMismatch {
            expected: images.n(),
            found: bad.nrows(),
        });
    }
    let norms: Vec<Vec<f64>> = mats.iter().map(|m| row_norms(m)).collect();
    let (keep, dropped): (Vec<usize>, Vec<usize>) = (0..images.n())
        .partition(|&i| norms.iter().all(|ns| ns[i] > 0.0 && ns[i].is_finite()));
    let excluded: Vec<String> = dropped.iter().map(|&i| images.ids()[i].clone()).collect();
    if !excluded.is_empty() {
        warn!(
            "{} test instances have degenerate embeddings and were excluded",
            excluded.len()
        );
    }
    if keep.is_empty() {
        return Err(Error::InsufficientData("every test instance is degenerate".into()));
    }
    let rank = |q: &DMatrix<f64>, c: &DMatrix<f64>, nq: &[f64], nc: &[f64]| {
        let q = unit_rows(q, &keep, nq);
        let c = unit_rows(c, &keep, nc);
        ranks_from_similarity(&(q * c.transpose()))
    };
    let rank_img2txt = rank(&q_it, &c_it, &norms[0], &norms[1]);
    let rank_txt2img = rank(&q_ti, &c_ti, &norms[2], &norms[3]);
    let r = rank_img2txt
        .iter()
        .zip(&rank_txt2img)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(RetrievalResult {
        instance_ids: keep.iter().map(|&i| images.ids()[i].clone()).collect(),
        rank_img2txt,
        rank_txt2img,
        r,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::IdentityAligner;
    use proptest::prelude::*;

    #[test]
    fn pessimistic_ties() {
        // Query 0 ties with candidate 1; query 1 is uniquely best.
        let sim = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.1, 0.0, 0.9, 0.3, 0.2, 0.2, 0.1]);
        let ranks = ranks_from_similarity(&sim);
        assert_eq!(ranks, vec![200.0 / 3.0, 100.0 / 3.0, 100.0]);
    }

    #[test]
    fn identity_self_retrieval() {
        // Distinct directions on a parabola: no two rows are parallel.
        let data = (0..20).flat_map(|i| [1.0, i as f32, (i * i) as f32]).collect();
        let f = FeatureMatrix::with_index_ids(3, data).unwrap();
        let res = evaluate_retrieval(&IdentityAligner, &f, &f).unwrap();
        assert!(res.rank_img2txt.iter().all(|&r| r == 5.0));
        assert_eq!(res.recall_at(5.0).unwrap(), 100.0);
        assert_eq!(res.recall_at(100.0).unwrap(), 100.0);
        assert!(res.recall_at(0.0).is_err());
    }

    #[test]
    fn zero_rows_are_excluded() {
        let mut data: Vec<f32> = (0..30).map(|i| (i % 7) as f32 + 1.0).collect();
        data[6..9].iter_mut().for_each(|x| *x = 0.0);
        let f = FeatureMatrix::with_index_ids(3, data).unwrap();
        let res = evaluate_retrieval(&IdentityAligner, &f, &f).unwrap();
        assert_eq!(res.excluded, vec!["2".to_string()]);
        assert_eq!(res.len(), 9);
    }

    #[test]
    fn csv_round_trip_keeps_ranks() {
        let res = RetrievalResult {
            instance_ids: vec!["a".into(), "b".into()],
            rank_img2txt: vec![0.5, 50.0],
            rank_txt2img: vec![1.0, 100.0],
            r: vec![0.75, 75.0],
            excluded: vec![],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "instance_id,rank_img2txt,rank_txt2img,r_i,hit@1,hit@5,hit@10\na,0.5,1,0.75,1,1,1\nb,50,100,75,0,0,0\n"
        );
        assert_eq!(read_retrieval_csv(buf.as_slice()).unwrap(), res);
    }

    proptest! {
        #[test]
        fn ranks_invariant_under_increasing_transform(
            vals in proptest::collection::vec(-3.0f64..3.0, 36),
        ) {
            let sim = DMatrix::from_row_slice(6, 6, &vals);
            let warped = sim.map(|s| s.exp() * 2.0 + s.powi(3));
            prop_assert_eq!(ranks_from_similarity(&sim), ranks_from_similarity(&warped));
        }

        #[test]
        fn recall_is_monotone_in_p(
            ranks in proptest::collection::vec(1usize..=50, 1..40),
            p1 in 0.1f64..100.0, dp in 0.0f64..50.0,
        ) {
            let pct: Vec<f64> = ranks.iter().map(|&r| r as f64 * 2.0).collect();
            let res = RetrievalResult {
                instance_ids: (0..pct.len()).map(|i| i.to_string()).collect(),
                rank_img2txt: pct.clone(),
                rank_txt2img: pct.iter().rev().copied().collect(),
                r: pct.clone(),
                excluded: vec![],
            };
            let p2 = (p1 + dp).min(100.0);
            prop_assert!(res.recall_at(p1).unwrap() <= res.recall_at(p2).unwrap());
            prop_assert_eq!(res.recall_at(100.0).unwrap(), 100.0);
        }
    }
}
