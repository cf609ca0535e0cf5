//! Test-instance × concept affinities `s_ic`.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use crate::dataset::{read_token_records, read_topic_table, TokenRecord};
use crate::error::{Error, Result};

/// Nonnegative affinities, one row per instance, one column per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    instance_ids: Vec<String>,
    concepts: Vec<String>,
    data: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(instance_ids: Vec<String>, concepts: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let c = concepts.len();
        if data.len() != instance_ids.len() * c {
            return Err(Error::RowCountMismatch {
                expected: instance_ids.len() * c,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / c,
                col: pos % c,
            });
        }
        if let Some(pos) = data.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeWeight {
                row: pos / c,
                topic: concepts[pos % c].clone(),
                value: data[pos],
            });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = instance_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(AffinityMatrix {
            instance_ids,
            concepts,
            data,
        })
    }

    /// Length-normalized token counts over `vocab`: each instance's row is
    /// its in-vocabulary token counts divided by their total (all zeros when
    /// no token is in the vocabulary).
    pub fn from_tokens(records: &[TokenRecord], vocab: &[String]) -> Result<Self> {
        let col: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let c = vocab.len();
        let mut data = vec![0.0; records.len() * c];
        for (i, rec) in records.iter().enumerate() {
            let row = &mut data[i * c..(i + 1) * c];
            let mut total = 0.0;
            for tok in &rec.tokens {
                if let Some(&j) = col.get(tok.as_str()) {
                    row[j] += 1.0;
                    total += 1.0;
                }
            }
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        let ids = records.iter().map(|r| r.image.clone()).collect();
        AffinityMatrix::new(ids, vocab.to_vec(), data)
    }

    /// Topic weights normalized to per-instance proportions.
    pub fn from_topic_rows(ids: Vec<String>, topics: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * topics.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != topics.len() {
                return Err(Error::format("topic affinity", format!("row {r} has {} values", row.len())));
            }
            let total: f64 = row.iter().sum();
            data.extend(row.iter().map(|&v| if total > 0.0 { v / total } else { v }));
        }
        AffinityMatrix::new(ids, topics, data)
    }

    /// `.jsonl` files are token records (requires `vocab`); anything else is
    /// read as a topic CSV.
    pub fn load(path: impl AsRef<Path>, vocab: Option<&[String]>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            let vocab = vocab.ok_or_else(|| {
                Error::InvalidConfig("token affinities need the concept vocabulary".into())
            })?;
            AffinityMatrix::from_tokens(&read_token_records(path)?, vocab)
        } else {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let (ids, topics, rows) = read_topic_table(file)?;
            AffinityMatrix::from_topic_rows(ids, topics, rows)
        }
    }

    pub fn n_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn get(&self, instance: usize, concept: usize) -> f64 {
        self.data[instance * self.concepts.len() + concept]
    }

    pub fn row(&self, instance: usize) -> &[f64] {
        let c = self.concepts.len();
        &self.data[instance * c..(instance + 1) * c]
    }

    pub fn column_mass(&self, concept: usize) -> f64 {
        (0..self.n_instances()).map(|i| self.get(i, concept)).sum()
    }

    /// Rows reordered to `ids`; extra rows are dropped, missing ids are an error.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = self
            .instance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.concepts.len());
        for id in ids {
            let &r = lookup.get(id.as_str()).ok_or_else(|| Error::UnknownId(id.clone()))?;
            data.extend_from_slice(self.row(r));
        }
        Ok(AffinityMatrix {
            instance_ids: ids.to_vec(),
            concepts: self.concepts.clone(),
            data,
        })
    }

    pub fn scale_column(&self, concept: usize, factor: f64) -> Result<Self> {
        let c = self.concepts.len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(p, &v)| if p % c == concept { v * factor } else { v })
            .collect();
        AffinityMatrix::new(self.instance_ids.clone(), self.concepts.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_rows_sum_to_one() {
        let recs = vec![
            TokenRecord {
                image: "a".into(),
                tokens: vec!["dog".into(), "dog".into(), "sky".into(), "zzz".into()],
            },
            TokenRecord {
                image: "b".into(),
                tokens: vec!["zzz".into()],
            },
        ];
        let vocab = vec!["dog".to_string(), "sky".to_string()];
        let a = AffinityMatrix::from_tokens(&recs, &vocab).unwrap();
        assert_eq!(a.row(0), &[2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(a.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn topic_rows_become_proportions() {
        let a = AffinityMatrix::from_topic_rows(
            vec!["x".into(), "y".into()],
            vec!["t0".into(), "t1".into()],
            vec![vec![1.0, 3.0], vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(a.row(0), &[0.25, 0.75]);
        assert!(AffinityMatrix::new(vec!["x".into()], vec!["t".into()], vec![-1.0]).is_err());
    }

    #[test]
    fn alignment_by_id() {
        let a = AffinityMatrix::new(
            vec!["x".into(), "y".into(), "z".into()],
            vec!["t".into()],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let b = a.aligned_to(&["z".into(), "x".into()]).unwrap();
        assert_eq!((b.get(0, 0), b.get(1, 0)), (3.0, 1.0));
        assert!(matches!(a.aligned_to(&["w".into()]), Err(Error::UnknownId(_))));
    }
}
