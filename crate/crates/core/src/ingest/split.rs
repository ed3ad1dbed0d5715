use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train:test partition ratio and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_parts: u32,
    pub test_parts: u32,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_parts: 3,
            test_parts: 1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Train size for `n` items: `floor(n * train / (train + test))`.
    pub fn train_len(&self, n: usize) -> usize {
        let parts = (self.train_parts + self.test_parts) as u64;
        (n as u64 * self.train_parts as u64 / parts) as usize
    }
}

/// Seeded shuffle, then the first `train_len` items train and the rest test.
pub fn split_dataset<T: Clone>(records: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    if spec.train_parts == 0 || spec.test_parts == 0 {
        return Err(Error::domain("both split parts must be positive"));
    }
    let parts = (spec.train_parts + spec.test_parts) as usize;
    if records.len() < parts.max(4) {
        return Err(Error::domain(format!(
            "{} records cannot be split {}:{}",
            records.len(),
            spec.train_parts,
            spec.test_parts
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let cut = spec.train_len(records.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn benchmark_split_sizes() {
        let spec = SplitSpec::default();
        for (n, train, test) in [(4329, 3246, 1083), (3000, 2250, 750), (2150, 1612, 538), (2000, 1500, 500)] {
            let items: Vec<usize> = (0..n).collect();
            let (a, b) = split_dataset(&items, &spec).unwrap();
            assert_eq!((a.len(), b.len()), (train, test), "n = {n}");
        }
    }

    #[test]
    fn seeded_and_too_small() {
        let items: Vec<u32> = (0..100).collect();
        let spec = SplitSpec { seed: 9, ..SplitSpec::default() };
        assert_eq!(split_dataset(&items, &spec).unwrap(), split_dataset(&items, &spec).unwrap());
        let other = SplitSpec { seed: 10, ..spec };
        assert_ne!(split_dataset(&items, &spec).unwrap().0, split_dataset(&items, &other).unwrap().0);
        assert!(split_dataset(&items[..3], &spec).is_err());
        let wide = SplitSpec { train_parts: 9, test_parts: 1, seed: 0 };
        assert!(split_dataset(&items[..9], &wide).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_covering(n in 4usize..500, seed in any::<u64>(), tr in 1u32..5, te in 1u32..5) {
            let spec = SplitSpec { train_parts: tr, test_parts: te, seed };
            let items: Vec<usize> = (0..n).collect();
            prop_assume!(n >= (tr + te) as usize);
            let (a, b) = split_dataset(&items, &spec).unwrap();
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }
}
