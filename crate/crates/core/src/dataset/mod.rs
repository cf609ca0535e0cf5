//! Domain types and ingestion for image features, discrete concepts and topic matrices.

mod concepts;
mod features;
mod topics;

use serde::{Deserialize, Serialize};

pub use concepts::{
    concepts_from_records, load_concepts, read_token_records, ConceptIndex, TokenRecord,
    DEFAULT_MIN_SUPPORT,
};
pub use features::{load_features, write_features, FeatureFormat, FeatureMatrix, FEATURE_MAGIC};
pub use topics::{load_topics, read_topic_table, topics_for_manifest, RawTopicTable, TopicMatrix};

use crate::error::{Error, Result};

/// Disjoint, nonempty train and test row sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Split {
    pub fn new(train: Vec<usize>, test: Vec<usize>, n: usize) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidSplit("train and test must both be nonempty".into()));
        }
        let mut side = vec![0u8; n];
        for (rows, tag) in [(&train, 1u8), (&test, 2u8)] {
            for &r in rows {
                let slot = side
                    .get_mut(r)
                    .ok_or_else(|| Error::InvalidSplit(format!("row {r} out of range for {n}")))?;
                if *slot != 0 {
                    return Err(Error::InvalidSplit(format!("row {r} listed twice")));
                }
                *slot = tag;
            }
        }
        Ok(Split { train, test })
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

#[derive(Debug, Clone)]
pub enum Concepts {
    Discrete(ConceptIndex),
    Continuous(TopicMatrix),
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub concepts: Concepts,
    pub split: Option<Split>,
}

impl DatasetBundle {
    pub fn new(features: FeatureMatrix, concepts: Concepts, split: Option<Split>) -> Result<Self> {
        let n = match &concepts {
            Concepts::Discrete(c) => c.n_images(),
            Concepts::Continuous(t) => t.n(),
        };
        if n != features.n() {
            return Err(Error::RowCountMismatch {
                expected: features.n(),
                found: n,
            });
        }
        if let Some(split) = &split {
            Split::new(split.train.clone(), split.test.clone(), features.n())?;
        }
        Ok(DatasetBundle {
            features,
            concepts,
            split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rejects_overlap_and_empty() {
        assert!(Split::new(vec![0, 1], vec![2], 3).is_ok());
        assert!(Split::new(vec![0, 1], vec![1], 3).is_err());
        assert!(Split::new(vec![], vec![1], 3).is_err());
        assert!(Split::new(vec![0], vec![5], 3).is_err());
    }

    #[test]
    fn bundle_checks_row_counts() {
        let f = FeatureMatrix::with_index_ids(1, vec![0.0, 1.0, 2.0]).unwrap();
        let c = ConceptIndex::from_postings(2, vec!["a".into()], vec![vec![0]]).unwrap();
        assert!(DatasetBundle::new(f, Concepts::Discrete(c), None).is_err());
    }
}
