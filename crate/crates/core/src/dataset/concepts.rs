//! Discrete word/tag associations: `V_w` postings and per-image token sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_SUPPORT: usize = 100;

/// One line of a concept file: `{"image": "<id>", "tokens": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub image: String,
    pub tokens: Vec<String>,
}

/// Reads a JSON Lines concept file. Token multiplicity is preserved here;
/// [`ConceptIndex`] collapses it to set semantics.
pub fn read_token_records(path: impl AsRef<Path>) -> Result<Vec<TokenRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("concept file", format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Word ↔ image associations bound to a feature matrix of `n` rows.
///
/// `vocab` is sorted, `postings[w]` holds the sorted rows carrying word `w`, and
/// `inverse[v]` the sorted word indices on row `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptIndex {
    n: usize,
    vocab: Vec<String>,
    postings: Vec<Vec<u32>>,
    inverse: Vec<Vec<u32>>,
}

impl ConceptIndex {
    /// Builds the index from `(row, token)` observations. Words with fewer
    /// than `min_support` distinct images are dropped.
    pub fn from_assignments<I, S>(n: usize, assignments: I, min_support: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, S)>,
        S: AsRef<str>,
    {
        if min_support == 0 {
            return Err(Error::InvalidConfig("min_support must be at least 1".into()));
        }
        let mut by_word: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for (row, token) in assignments {
            if row >= n {
                return Err(Error::InvalidConfig(format!(
                    "row {row} out of range for {n} images"
                )));
            }
            by_word
                .entry(token.as_ref().to_string())
                .or_default()
                .insert(row as u32);
        }
        let kept: Vec<(String, Vec<u32>)> = by_word
            .into_iter()
            .filter(|(_, rows)| rows.len() >= min_support)
            .map(|(w, rows)| (w, rows.into_iter().collect()))
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { min_support });
        }
        let (vocab, postings): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
        Ok(Self::from_parts(n, vocab, postings))
    }

    /// Builds directly from sorted vocabulary and postings (no filtering).
    pub fn from_postings(n: usize, vocab: Vec<String>, postings: Vec<Vec<u32>>) -> Result<Self> {
        if vocab.len() != postings.len() {
            return Err(Error::InvalidConfig("vocab and postings differ in length".into()));
        }
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary { min_support: 1 });
        }
        let mut order: Vec<usize> = (0..vocab.len()).collect();
        order.sort_by(|&a, &b| vocab[a].cmp(&vocab[b]));
        let mut sorted_vocab = Vec::with_capacity(vocab.len());
        let mut sorted_postings = Vec::with_capacity(vocab.len());
        for i in order {
            if sorted_vocab.last() == Some(&vocab[i]) {
                return Err(Error::InvalidConfig(format!("duplicate word {:?}", vocab[i])));
            }
            let mut rows = postings[i].clone();
            rows.sort_unstable();
            rows.dedup();
            if rows.is_empty() {
                return Err(Error::EmptyPostings(vocab[i].clone()));
            }
            if let Some(&r) = rows.last().filter(|&&r| r as usize >= n) {
                return Err(Error::InvalidConfig(format!(
                    "row {r} out of range for {n} images"
                )));
            }
            sorted_vocab.push(vocab[i].clone());
            sorted_postings.push(rows);
        }
        Ok(Self::from_parts(n, sorted_vocab, sorted_postings))
    }

    fn from_parts(n: usize, vocab: Vec<String>, postings: Vec<Vec<u32>>) -> Self {
        let mut inverse = vec![Vec::new(); n];
        for (w, rows) in postings.iter().enumerate() {
            for &r in rows {
                inverse[r as usize].push(w as u32);
            }
        }
        ConceptIndex {
            n,
            vocab,
            postings,
            inverse,
        }
    }

    pub fn n_images(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn postings(&self, word: usize) -> &[u32] {
        &self.postings[word]
    }

    pub fn inverse(&self, row: usize) -> &[u32] {
        &self.inverse[row]
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.vocab.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }

    /// Re-applies a support threshold.
    pub fn filter_min_support(&self, min_support: usize) -> Result<Self> {
        let (vocab, postings): (Vec<_>, Vec<_>) = self
            .vocab
            .iter()
            .zip(&self.postings)
            .filter(|(_, p)| p.len() >= min_support.max(1))
            .map(|(w, p)| (w.clone(), p.clone()))
            .unzip();
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary { min_support });
        }
        Ok(Self::from_parts(self.n, vocab, postings))
    }

    /// True when no image carries more than one word.
    pub fn is_disjoint(&self) -> bool {
        self.inverse.iter().all(|ws| ws.len() <= 1)
    }
}

/// Loads a JSONL concept file against the manifest of `features`.
pub fn load_concepts(
    path: impl AsRef<Path>,
    features: &FeatureMatrix,
    min_support: usize,
) -> Result<ConceptIndex> {
    let records = read_token_records(path)?;
    concepts_from_records(&records, features.ids(), min_support)
}

pub fn concepts_from_records(
    records: &[TokenRecord],
    ids: &[String],
    min_support: usize,
) -> Result<ConceptIndex> {
    let lookup = id_lookup(ids);
    let mut pairs = Vec::new();
    for rec in records {
        let row = *lookup
            .get(rec.image.as_str())
            .ok_or_else(|| Error::UnknownId(rec.image.clone()))?;
        pairs.extend(rec.tokens.iter().map(|t| (row, t.as_str())));
    }
    ConceptIndex::from_assignments(ids.len(), pairs, min_support)
}

pub(crate) fn id_lookup(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("im{i}")).collect()
    }

    #[test]
    fn min_support_boundary() {
        // "rare" on 99 images, "common" on 100.
        let mut recs = Vec::new();
        for i in 0..120 {
            let mut tokens = Vec::new();
            if i < 99 {
                tokens.push("rare".to_string());
            }
            if i < 100 {
                tokens.push("common".to_string());
            }
            recs.push(TokenRecord {
                image: format!("im{i}"),
                tokens,
            });
        }
        let idx = concepts_from_records(&recs, &ids(120), 100).unwrap();
        assert_eq!(idx.vocab(), &["common"]);
        let idx = concepts_from_records(&recs, &ids(120), 1).unwrap();
        assert_eq!(idx.vocab(), &["common", "rare"]);
    }

    #[test]
    fn duplicate_tokens_count_once() {
        let recs = vec![
            TokenRecord {
                image: "im0".into(),
                tokens: vec!["dog".into(), "dog".into(), "park".into()],
            },
            TokenRecord {
                image: "im1".into(),
                tokens: vec!["dog".into()],
            },
        ];
        let idx = concepts_from_records(&recs, &ids(3), 1).unwrap();
        let dog = idx.word_index("dog").unwrap();
        assert_eq!(idx.postings(dog), &[0, 1]);
        assert_eq!(idx.inverse(0).len(), 2);
        assert!(idx.inverse(2).is_empty());
    }

    #[test]
    fn unknown_image_and_empty_vocab() {
        let recs = vec![TokenRecord {
            image: "nope".into(),
            tokens: vec!["x".into()],
        }];
        assert!(matches!(
            concepts_from_records(&recs, &ids(2), 1),
            Err(Error::UnknownId(_))
        ));
        let recs = vec![TokenRecord {
            image: "im0".into(),
            tokens: vec!["x".into()],
        }];
        assert!(matches!(
            concepts_from_records(&recs, &ids(2), 2),
            Err(Error::EmptyVocabulary { min_support: 2 })
        ));
    }

    #[test]
    fn jsonl_file_is_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"image\": \"im1\", \"tokens\": [\"dog\", \"park\"]}\n\n{\"image\": \"im0\", \"tokens\": [\"dog\"]}\n",
        )
        .unwrap();
        let fm = FeatureMatrix::new(ids(2), 1, vec![0.0, 1.0]).unwrap();
        let idx = load_concepts(&path, &fm, 1).unwrap();
        assert_eq!(idx.vocab(), &["dog", "park"]);
        assert_eq!(idx.postings(0), &[0, 1]);
        std::fs::write(&path, "{\"image\": 3}\n").unwrap();
        assert!(matches!(load_concepts(&path, &fm, 1), Err(Error::Format { .. })));
    }

    fn arb_assignments() -> impl Strategy<Value = (usize, Vec<(usize, u8)>)> {
        (1usize..40).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0u8..12), 0..200)))
    }

    proptest! {
        #[test]
        fn double_counting_identity((n, pairs) in arb_assignments()) {
            let pairs: Vec<(usize, String)> = pairs.into_iter().map(|(r, w)| (r, format!("w{w}"))).collect();
            if let Ok(idx) = ConceptIndex::from_assignments(n, pairs.iter().map(|(r, w)| (*r, w.as_str())), 1) {
                let by_word: usize = (0..idx.len()).map(|w| idx.postings(w).len()).sum();
                let by_image: usize = (0..n).map(|v| idx.inverse(v).len()).sum();
                prop_assert_eq!(by_word, by_image);
                for w in 0..idx.len() {
                    for &v in idx.postings(w) {
                        prop_assert!(idx.inverse(v as usize).contains(&(w as u32)));
                    }
                }
            }
        }

        #[test]
        fn filtering_twice_equals_filtering_once(
            (n, pairs) in arb_assignments(), s in 1usize..5, extra in 1usize..5,
        ) {
            let pairs: Vec<(usize, String)> = pairs.into_iter().map(|(r, w)| (r, format!("w{w}"))).collect();
            let assign = || pairs.iter().map(|(r, w)| (*r, w.as_str()));
            let once = ConceptIndex::from_assignments(n, assign(), s + extra).ok();
            let twice = ConceptIndex::from_assignments(n, assign(), s)
                .ok()
                .and_then(|idx| idx.filter_min_support(s + extra).ok());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn ingestion_is_deterministic((n, pairs) in arb_assignments()) {
            let pairs: Vec<(usize, String)> = pairs.into_iter().map(|(r, w)| (r, format!("w{w}"))).collect();
            let a = ConceptIndex::from_assignments(n, pairs.iter().map(|(r, w)| (*r, w.as_str())), 1).ok();
            let b = ConceptIndex::from_assignments(n, pairs.iter().map(|(r, w)| (*r, w.as_str())), 1).ok();
            prop_assert_eq!(a, b);
        }
    }
}
