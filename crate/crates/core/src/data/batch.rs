//! Mini-batch planning shared by every client in a синchronous round.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Ordered index batches for one epoch; every client consumes the identical
/// plan so uploaded feature rows stay aligned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub seed: u64,
    pub batch_size: usize,
}

/// Disjoint cover of `0..n` in batches of `batch_size`; the final short
/// batch is kept. With `shuffle` off the order is sequential.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::domain("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let batches = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(BatchPlan {
        batches,
        seed,
        batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_short_batch_is_kept() {
        let plan = make_batches(10, 4, 0, true).unwrap();
        let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn unshuffled_plan_is_sequential() {
        let plan = make_batches(10, 4, 0, false).unwrap();
        assert_eq!(plan.batches[0], vec![0, 1, 2, 3]);
        assert_eq!(plan.batches[1], vec![4, 5, 6, 7]);
        assert_eq!(plan.batches[2], vec![8, 9]);
    }

    #[test]
    fn batches_cover_all_indices_disjointly() {
        let plan = make_batches(10, 4, 123, true).unwrap();
        let mut all: Vec<usize> = plan.batches.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_batches(100, 7, 42, true).unwrap();
        let b = make_batches(100, 7, 42, true).unwrap();
        let c = make_batches(100, 7, 43, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cover_property_holds(n in 1usize..10_000, bs in 1usize..600, seed in 0u64..32) {
            let plan = make_batches(n, bs, seed, true).unwrap();
            let mut all: Vec<usize> = plan.batches.iter().flatten().copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(*all.last().unwrap(), n - 1);
            for b in &plan.batches {
                prop_assert!(b.len() <= bs);
            }
        }
    }
}
