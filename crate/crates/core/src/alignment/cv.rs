//! Fold construction for cross-validation, optionally grouped so that every
//! member of a group (e.g. all pages of one book) lands on the same side.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};

fn check_folds(folds: usize, units: usize, what: &str) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("folds = {folds} must be at least 2")));
    }
    if units < folds {
        return Err(Error::InsufficientData(format!("{units} {what} for {folds} folds")));
    }
    Ok(())
}

fn splits_from_assignment(assign: &[usize], folds: usize) -> Result<Vec<Split>> {
    let n = assign.len();
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == f);
            Split::new(train, test, n)
        })
        .collect()
}

/// Shuffled k-fold over `n` rows; fold sizes differ by at most one.
pub fn kfold(n: usize, folds: usize, seed: u64) -> Result<Vec<Split>> {
    check_folds(folds, n, "rows")?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % folds;
    }
    splits_from_assignment(&assign, folds)
}

/// Grouped k-fold: groups are shuffled, then placed largest-first into the
/// currently smallest fold.
pub fn group_kfold(groups: &[String], folds: usize, seed: u64) -> Result<Vec<Split>> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    check_folds(folds, members.len(), "groups")?;
    let mut order: Vec<(&str, Vec<usize>)> = members.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Stable sort keeps the shuffled order among equal sizes.
    order.sort_by(|a, b| b.1.len().cmp(&a.1.len()));
    let mut sizes = vec![0usize; folds];
    let mut assign = vec![0; groups.len()];
    for (_, rows) in &order {
        let f = (0..folds).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[f] += rows.len();
        rows.iter().for_each(|&i| assign[i] = f);
    }
    splits_from_assignment(&assign, folds)
}

/// Splits `rows` into `(train, validation)` with `ceil(fraction · len)`
/// validation rows (at least one, and at least one row left for training).
pub fn holdout(rows: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("holdout fraction {fraction} is not in (0, 1)")));
    }
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!("{} rows cannot be split", rows.len())));
    }
    let mut order = rows.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * rows.len() as f64).ceil() as usize).clamp(1, rows.len() - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub test_groups: usize,
    /// Groups with rows on both sides of this fold; empty for a valid
    /// grouped split.
    pub leaked_groups: Vec<String>,
}

pub fn audit_groups(splits: &[Split], groups: &[String]) -> Vec<FoldAudit> {
    splits
        .iter()
        .enumerate()
        .map(|(fold, s)| {
            let train: BTreeSet<&str> = s.train().iter().map(|&i| groups[i].as_str()).collect();
            let test: BTreeSet<&str> = s.test().iter().map(|&i| groups[i].as_str()).collect();
            FoldAudit {
                fold,
                train_size: s.train().len(),
                test_size: s.test().len(),
                test_groups: test.len(),
                leaked_groups: test.intersection(&train).map(|g| g.to_string()).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn kfold_partitions(n in 10usize..200, folds in 2usize..11, seed: u64) {
            let splits = kfold(n, folds, seed).unwrap();
            let mut seen = vec![0; n];
            for s in &splits {
                prop_assert_eq!(s.train().len() + s.test().len(), n);
                s.test().iter().for_each(|&i| seen[i] += 1);
                let (lo, hi) = (n / folds, n.div_ceil(folds));
                prop_assert!((lo..=hi).contains(&s.test().len()));
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn grouped_folds_never_leak(
            sizes in proptest::collection::vec(1usize..15, 10..40),
            folds in 2usize..11,
            seed: u64,
        ) {
            let groups: Vec<String> = sizes
                .iter()
                .enumerate()
                .flat_map(|(g, &s)| std::iter::repeat_n(format!("book{g}"), s))
                .collect();
            let splits = group_kfold(&groups, folds, seed).unwrap();
            let mut seen = vec![0; groups.len()];
            for s in &splits {
                s.test().iter().for_each(|&i| seen[i] += 1);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            for audit in audit_groups(&splits, &groups) {
                prop_assert!(audit.leaked_groups.is_empty());
            }
        }
    }

    #[test]
    fn audit_detects_leaks() {
        let groups: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let split = Split::new(vec![0, 2], vec![1, 3], 4).unwrap();
        let audit = audit_groups(&[split], &groups);
        assert_eq!(audit[0].leaked_groups, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn holdout_sizes() {
        let rows: Vec<usize> = (100..120).collect();
        let (train, val) = holdout(&rows, 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (18, 2));
        assert!(val.iter().chain(&train).all(|r| rows.contains(r)));
        assert!(holdout(&rows, 1.0, 0).is_err());
        assert!(kfold(5, 10, 0).is_err());
        assert!(group_kfold(&vec!["x".to_string(); 30], 2, 0).is_err());
    }
}
