use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

/// Example indices per split, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// SHA-256 over the test examples' group keys, in index order.
    pub fn test_hash<K: AsRef<str>>(&self, keys: &[K]) -> String {
        let mut h = Sha256::new();
        for &i in &self.test {
            h.update(i.to_le_bytes());
            h.update(keys[i].as_ref().as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// Splits examples by group key so that no key lands in two splits.
/// Group counts per split are `floor(n * fraction)` for validation and
/// test, with the remainder going to train.
pub fn split_data<K: Ord + Clone>(keys: &[K], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("bad split fractions {fractions:?}")));
    }
    let mut groups: Vec<K> = keys.iter().cloned().collect::<BTreeSet<K>>().into_iter().collect();
    let n = groups.len();
    let take = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let (n_val, n_test) = (take(fractions[1]), take(fractions[2]));
    let n_train = n.saturating_sub(n_val + n_test);
    let starved = [(fractions[0], n_train), (fractions[1], n_val), (fractions[2], n_test)]
        .iter()
        .any(|&(f, c)| f > 0.0 && c == 0);
    if starved {
        return Err(Error::config(format!("{n} groups are too few for fractions {fractions:?}")));
    }
    SeededRng::fork(seed, "harness.split").shuffle(&mut groups);
    let mut part: BTreeMap<K, u8> = BTreeMap::new();
    for (i, g) in groups.into_iter().enumerate() {
        part.insert(g, if i < n_test { 2 } else if i < n_test + n_val { 1 } else { 0 });
    }
    let mut split = Split::default();
    for (i, k) in keys.iter().enumerate() {
        match part[k] {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_partition() {
        let keys: Vec<usize> = (0..10).collect();
        let s = split_data(&keys, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, keys);
        assert_eq!(s, split_data(&keys, [0.8, 0.1, 0.1], 7).unwrap());
    }

    #[test]
    fn groups_stay_together() {
        let keys = ["a", "b", "a", "c", "b", "d", "e", "a", "f", "g", "h", "i"];
        let s = split_data(&keys, [0.6, 0.2, 0.2], 3).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            for other in [&s.train, &s.val, &s.test] {
                if std::ptr::eq(part, other) {
                    continue;
                }
                for &i in part {
                    assert!(other.iter().all(|&j| keys[j] != keys[i]));
                }
            }
        }
    }

    #[test]
    fn too_few_groups() {
        assert!(matches!(split_data(&[1, 2, 3], [0.8, 0.1, 0.1], 0), Err(Error::Config(_))));
        assert!(split_data(&[1, 2, 3], [1.0, 0.0, 0.0], 0).is_ok());
        assert!(matches!(split_data(&[1, 2], [0.5, 0.6, 0.0], 0), Err(Error::Config(_))));
    }
}
