//! Visual concreteness of textual concepts in multimodal datasets.
//!
//! A concept (word or topic) is "concrete" when the images it is attached to
//! cluster in image-feature space: their nearest neighbors tend to carry the
//! same concept more often than a random assignment would predict. The crate
//! also trains simple image/text alignment models, evaluates bidirectional
//! retrieval, and correlates per-concept retrievability with concreteness.

pub mod alignment;
pub mod analysis;
mod binio;
pub mod concreteness;
pub mod dataset;
pub mod error;
pub mod knn;
pub mod synth;

pub use dataset::{ConceptIndex, FeatureFormat, FeatureMatrix, Split, TopicMatrix};
pub use error::{Error, Result};
pub use knn::{build_index, Index, KnnConfig, Metric, NeighborLists, SearchMode};
