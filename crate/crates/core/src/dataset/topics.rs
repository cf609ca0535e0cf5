//! Image-by-topic weight matrices.
//!
//! Rows are stored as supplied; no renormalization happens at ingestion.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::dataset::concepts::{id_lookup, ConceptIndex};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatrix {
    topic_ids: Vec<String>,
    n: usize,
    /// Row-major `n x |T|`.
    weights: Vec<f64>,
}

impl TopicMatrix {
    pub fn new(topic_ids: Vec<String>, n: usize, weights: Vec<f64>) -> Result<Self> {
        let t = topic_ids.len();
        if t == 0 || n == 0 {
            return Err(Error::format("topic matrix", "need at least one image and one topic"));
        }
        if weights.len() != n * t {
            return Err(Error::RowCountMismatch {
                expected: n,
                found: weights.len() / t,
            });
        }
        for (pos, &y) in weights.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    row: pos / t,
                    col: pos % t,
                });
            }
            if y < 0.0 {
                return Err(Error::NegativeWeight {
                    row: pos / t,
                    topic: topic_ids[pos % t].clone(),
                    value: y,
                });
            }
        }
        let m = TopicMatrix {
            topic_ids,
            n,
            weights,
        };
        for topic in 0..t {
            if m.column_mass(topic) <= 0.0 {
                return Err(Error::ZeroMassTopic(m.topic_ids[topic].clone()));
            }
        }
        Ok(m)
    }

    /// One-hot matrix for a disjoint concept index: `Y[v][w] = 1` iff `v ∈ V_w`.
    pub fn one_hot(concepts: &ConceptIndex) -> Result<Self> {
        if !concepts.is_disjoint() {
            return Err(Error::InvalidConfig(
                "one-hot topics require a disjoint concept index".into(),
            ));
        }
        let t = concepts.len();
        let n = concepts.n_images();
        let mut weights = vec![0.0; n * t];
        for w in 0..t {
            for &v in concepts.postings(w) {
                weights[v as usize * t + w] = 1.0;
            }
        }
        TopicMatrix::new(concepts.vocab().to_vec(), n, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_topics(&self) -> usize {
        self.topic_ids.len()
    }

    pub fn topic_ids(&self) -> &[String] {
        &self.topic_ids
    }

    #[inline]
    pub fn weight(&self, row: usize, topic: usize) -> f64 {
        self.weights[row * self.topic_ids.len() + topic]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let t = self.topic_ids.len();
        &self.weights[row * t..(row + 1) * t]
    }

    pub fn column(&self, topic: usize) -> Vec<f64> {
        (0..self.n).map(|v| self.weight(v, topic)).collect()
    }

    pub fn column_mass(&self, topic: usize) -> f64 {
        (0..self.n).map(|v| self.weight(v, topic)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Copy with one column multiplied by `factor`.
    pub fn scale_column(&self, topic: usize, factor: f64) -> Result<Self> {
        let t = self.topic_ids.len();
        let mut weights = self.weights.clone();
        for v in 0..self.n {
            weights[v * t + topic] *= factor;
        }
        TopicMatrix::new(self.topic_ids.clone(), self.n, weights)
    }

    pub fn write_csv<W: Write>(&self, ids: &[String], writer: W) -> Result<()> {
        if ids.len() != self.n {
            return Err(Error::RowCountMismatch {
                expected: self.n,
                found: ids.len(),
            });
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let header = std::iter::once("id").chain(self.topic_ids.iter().map(String::as_str));
        wtr.write_record(header)
            .map_err(|e| Error::format("topic csv", e.to_string()))?;
        for (v, id) in ids.iter().enumerate() {
            let fields = std::iter::once(id.clone()).chain(self.row(v).iter().map(|y| y.to_string()));
            wtr.write_record(fields)
                .map_err(|e| Error::format("topic csv", e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Raw `(row ids, topic ids, weights)` in file order.
pub type RawTopicTable = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

pub fn read_topic_table<R: Read>(reader: R) -> Result<RawTopicTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("topic csv header", e.to_string()))?
        .clone();
    if header.get(0) != Some("id") || header.len() < 2 {
        return Err(Error::format("topic csv header", "expected id,<topic_0>,..."));
    }
    let topics: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format("topic csv", e.to_string()))?;
        if record.len() != topics.len() + 1 {
            return Err(Error::format(
                "topic csv",
                format!("row {row} has {} fields, expected {}", record.len(), topics.len() + 1),
            ));
        }
        ids.push(record[0].to_string());
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(col, f)| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::format("topic csv", format!("row {row}, column {col}: {f:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Ok((ids, topics, rows))
}

/// Loads a topic CSV and reorders its rows to match the feature manifest.
pub fn load_topics(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<TopicMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (ids, topics, rows) = read_topic_table(BufReader::new(file))?;
    topics_for_manifest(&ids, topics, rows, features.ids())
}

pub fn topics_for_manifest(
    ids: &[String],
    topics: Vec<String>,
    rows: Vec<Vec<f64>>,
    manifest: &[String],
) -> Result<TopicMatrix> {
    if ids.len() != manifest.len() {
        return Err(Error::RowCountMismatch {
            expected: manifest.len(),
            found: ids.len(),
        });
    }
    let lookup = id_lookup(manifest);
    let t = topics.len();
    let mut weights = vec![0.0; manifest.len() * t];
    let mut seen = vec![false; manifest.len()];
    for (id, values) in ids.iter().zip(rows) {
        let row = *lookup
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownId(id.clone()))?;
        if std::mem::replace(&mut seen[row], true) {
            return Err(Error::DuplicateId(id.clone()));
        }
        weights[row * t..(row + 1) * t].copy_from_slice(&values);
    }
    TopicMatrix::new(topics, manifest.len(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("im{i}")).collect()
    }

    #[test]
    fn four_by_two() {
        let text = "id,sky,sea\nim0,0.5,0.5\nim1,1,0\nim2,0.25,0.75\nim3,0,1\n";
        let (ids, topics, rows) = read_topic_table(text.as_bytes()).unwrap();
        let m = topics_for_manifest(&ids, topics, rows, &manifest(4)).unwrap();
        assert_eq!((m.n(), m.n_topics()), (4, 2));
        assert_eq!(m.weight(2, 1), 0.75);
    }

    #[test]
    fn rows_are_reordered_to_manifest() {
        let text = "id,a\nim1,2\nim0,1\n";
        let (ids, topics, rows) = read_topic_table(text.as_bytes()).unwrap();
        let m = topics_for_manifest(&ids, topics, rows, &manifest(2)).unwrap();
        assert_eq!(m.column(0), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_column_names_topic() {
        let text = "id,a,b\nim0,1,0\nim1,1,0\n";
        let (ids, topics, rows) = read_topic_table(text.as_bytes()).unwrap();
        match topics_for_manifest(&ids, topics, rows, &manifest(2)) {
            Err(Error::ZeroMassTopic(t)) => assert_eq!(t, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_and_row_count() {
        let text = "id,a\nim0,-1\nim1,1\n";
        let (ids, topics, rows) = read_topic_table(text.as_bytes()).unwrap();
        assert!(matches!(
            topics_for_manifest(&ids, topics, rows, &manifest(2)),
            Err(Error::NegativeWeight { row: 0, .. })
        ));
        let text = "id,a\nim0,1\n";
        let (ids, topics, rows) = read_topic_table(text.as_bytes()).unwrap();
        assert!(matches!(
            topics_for_manifest(&ids, topics, rows, &manifest(2)),
            Err(Error::RowCountMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn one_hot_from_partition() {
        let idx = ConceptIndex::from_postings(
            5,
            vec!["b".into(), "a".into()],
            vec![vec![3, 4], vec![0, 1]],
        )
        .unwrap();
        let y = TopicMatrix::one_hot(&idx).unwrap();
        assert_eq!(y.topic_ids(), &["a", "b"]);
        assert_eq!(y.column(0), vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(y.column(1), vec![0.0, 0.0, 0.0, 1.0, 1.0]);

        let overlapping =
            ConceptIndex::from_postings(3, vec!["a".into(), "b".into()], vec![vec![0, 1], vec![1]])
                .unwrap();
        assert!(TopicMatrix::one_hot(&overlapping).is_err());
    }
}
