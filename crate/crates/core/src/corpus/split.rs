use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::InteractionRecord;
use crate::error::{Error, Result};

/// Train / validation / test partition, stored as ascending record indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Train size (train + validation) right after the random cut, before
    /// coverage adjustment.
    pub initial_train_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn indices(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn records(&self, records: &[InteractionRecord], part: Partition) -> Vec<InteractionRecord> {
        self.indices(part).iter().map(|&i| records[i].clone()).collect()
    }
}

/// 64-bit prefix of SHA-256 over `user \x1f item`; identical on every machine.
pub fn stable_pair_hash(user_id: &str, item_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(user_id.as_bytes());
    h.update([0x1f]);
    h.update(item_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

/// Random 80/20 train/test cut with a further 10% of train held out for
/// validation, then moves records into train until every user and item is
/// covered there.
///
/// For each uncovered entity (users first, then items, each in sorted id
/// order) the record to move is the one among its validation and test
/// records with the smallest [`stable_pair_hash`].
pub fn split_dataset(
    records: &[InteractionRecord],
    seed: u64,
    train_frac: f64,
    val_frac_of_train: f64,
) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::Config("cannot split an empty record list".into()));
    }
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac_of_train) {
        return Err(Error::Config("split fractions must lie in [0, 1]".into()));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train_total = ((n as f64) * train_frac).round() as usize;
    let n_val = ((n_train_total as f64) * val_frac_of_train).round() as usize;
    let mut part = vec![Partition::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        part[idx] = if rank < n_val {
            Partition::Validation
        } else if rank < n_train_total {
            Partition::Train
        } else {
            Partition::Test
        };
    }

    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut by_item: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(&r.user_id).or_default().push(i);
        by_item.entry(&r.item_id).or_default().push(i);
    }
    let mut train_users: HashSet<&str> = HashSet::new();
    let mut train_items: HashSet<&str> = HashSet::new();
    let mut test_count = 0usize;
    for (i, r) in records.iter().enumerate() {
        match part[i] {
            Partition::Train => {
                train_users.insert(&r.user_id);
                train_items.insert(&r.item_id);
            }
            Partition::Test => test_count += 1,
            Partition::Validation => {}
        }
    }

    let entities = by_user
        .iter()
        .map(|(k, v)| (true, *k, v))
        .chain(by_item.iter().map(|(k, v)| (false, *k, v)));
    for (is_user, key, owned) in entities {
        let covered = if is_user { train_users.contains(key) } else { train_items.contains(key) };
        if covered {
            continue;
        }
        let pick = owned
            .iter()
            .copied()
            .filter(|&i| part[i] != Partition::Train)
            .min_by_key(|&i| (stable_pair_hash(&records[i].user_id, &records[i].item_id), i))
            .expect("an uncovered entity has a non-train record");
        if part[pick] == Partition::Test {
            if test_count == 1 {
                return Err(Error::SplitInfeasible(format!(
                    "covering {} `{key}` would empty the test set",
                    if is_user { "user" } else { "item" }
                )));
            }
            test_count -= 1;
        }
        part[pick] = Partition::Train;
        train_users.insert(&records[pick].user_id);
        train_items.insert(&records[pick].item_id);
    }

    let collect = |p: Partition| -> Vec<usize> { (0..n).filter(|&i| part[i] == p).collect() };
    Ok(DatasetSplit {
        seed,
        train: collect(Partition::Train),
        validation: collect(Partition::Validation),
        test: collect(Partition::Test),
        initial_train_size: n_train_total,
    })
}

/// Users and items seen anywhere in `records` but not among `indices`.
pub fn uncovered(records: &[InteractionRecord], indices: &[usize]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut users: BTreeSet<String> = records.iter().map(|r| r.user_id.clone()).collect();
    let mut items: BTreeSet<String> = records.iter().map(|r| r.item_id.clone()).collect();
    for &i in indices {
        users.remove(&records[i].user_id);
        items.remove(&records[i].item_id);
    }
    (users, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(u: &str, i: &str) -> InteractionRecord {
        InteractionRecord { user_id: u.into(), item_id: i.into(), rating: 4.0, review: "text".into() }
    }

    #[test]
    fn single_user_ten_records() {
        let recs: Vec<_> = (0..10).map(|k| rec("solo", &format!("item{}", k % 2))).collect();
        let s = split_dataset(&recs, 7, 0.8, 0.1).unwrap();
        assert_eq!(s.initial_train_size, 8);
        assert_eq!(s.test.len() + s.validation.len() + s.train.len(), 10);
        let (u, i) = uncovered(&recs, &s.train);
        assert!(u.is_empty() && i.is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let recs: Vec<_> = (0..50).map(|k| rec(&format!("u{}", k % 7), &format!("i{}", k % 11))).collect();
        assert_eq!(split_dataset(&recs, 3, 0.8, 0.1).unwrap(), split_dataset(&recs, 3, 0.8, 0.1).unwrap());
        assert_ne!(split_dataset(&recs, 3, 0.8, 0.1).unwrap(), split_dataset(&recs, 4, 0.8, 0.1).unwrap());
    }

    #[test]
    fn infeasible_when_test_would_empty() {
        // two records, distinct users and items: the held-out record can't be covered
        let recs = vec![rec("a", "x"), rec("b", "y")];
        let err = split_dataset(&recs, 1, 0.5, 0.0).unwrap_err();
        assert!(matches!(err, Error::SplitInfeasible(_)));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(split_dataset(&[], 0, 0.8, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn coverage_and_disjointness(
            pairs in prop::collection::vec((0u8..20, 0u8..15), 30..200),
            seed in 0u64..1000,
        ) {
            let recs: Vec<_> = pairs.iter().map(|(u, i)| rec(&format!("u{u}"), &format!("i{i}"))).collect();
            match split_dataset(&recs, seed, 0.8, 0.1) {
                Ok(s) => {
                    let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..recs.len()).collect::<Vec<_>>());
                    let (u, i) = uncovered(&recs, &s.train);
                    prop_assert!(u.is_empty());
                    prop_assert!(i.is_empty());
                    prop_assert!(!s.test.is_empty());
                }
                Err(e) => prop_assert!(matches!(e, Error::SplitInfeasible(_))),
            }
        }
    }
}
