use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Guards `ceil(N · fraction)` against products like `10 · 0.2` landing a
/// hair above an integer.
const CEIL_SLACK: f64 = 1e-9;

/// Which subjects are held out. Ids are stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rows of `ds` belonging to the training side and to the test side.
    pub fn partition(&self, ds: &MultiViewDataset) -> (MultiViewDataset, MultiViewDataset) {
        let test: HashSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        let rows_in = |set: &HashSet<&str>| -> Vec<usize> {
            (0..ds.len())
                .filter(|&i| set.contains(ds.subject_ids[i].as_str()))
                .collect()
        };
        (ds.subset(&rows_in(&train)), ds.subset(&rows_in(&test)))
    }
}

fn test_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let k = (n as f64 * fraction - CEIL_SLACK).ceil().max(0.0) as usize;
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "a test fraction of {fraction} leaves an empty side with {n} subjects"
        )));
    }
    Ok(k)
}

/// Seeded uniform partition of `0..n`: `ceil(n · fraction)` test indices,
/// the rest train, both sorted.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = test_count(n, fraction)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "split"));
    let mut test = order[..k].to_vec();
    let mut train = order[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Splits a list of subject ids. The ids are sorted first, so the result
/// depends only on the set of ids, the fraction and the seed.
pub fn split_subjects(ids: &[String], fraction: f64, seed: u64) -> Result<SplitManifest> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let (train, test) = train_test_split(sorted.len(), fraction, seed)?;
    Ok(SplitManifest {
        seed,
        train_ids: train.into_iter().map(|i| sorted[i].clone()).collect(),
        test_ids: test.into_iter().map(|i| sorted[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_rule() {
        let (train, test) = train_test_split(10, 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (_, test) = train_test_split(11, 0.2, 1).unwrap();
        assert_eq!(test.len(), 3);
    }

    #[test]
    fn disjoint_exhaustive_and_seeded() {
        let (train, test) = train_test_split(37, 0.3, 9).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(train_test_split(37, 0.3, 9).unwrap(), (train, test));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(train_test_split(10, 0.0, 1).is_err());
        assert!(train_test_split(10, 1.0, 1).is_err());
        assert!(train_test_split(1, 0.5, 1).is_err());
    }

    #[test]
    fn subject_split_ignores_input_order() {
        let ids: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(split_subjects(&ids, 0.2, 4).unwrap(), split_subjects(&rev, 0.2, 4).unwrap());
    }
}
