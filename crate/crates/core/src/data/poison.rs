//! Poison-set sampling: the records whose raw attributes the adversary knows.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Record indices the adversary controls, sampled from the training split.
#[derive(Debug, Clone)]
pub struct PoisonSet {
    pub indices: BTreeSet<usize>,
    pub alpha: f64,
}

impl PoisonSet {
    pub fn contains(&self, record: usize) -> bool {
        self.indices.contains(&record)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform sample without replacement of `floor(alpha * n)` training records.
pub fn sample_poison(train_indices: &[usize], alpha: f64, seed: u64) -> Result<PoisonSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let k = (alpha * train_indices.len() as f64).floor() as usize;
    let mut pool = train_indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    Ok(PoisonSet {
        indices: pool.into_iter().take(k).collect(),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinality_is_floor_alpha_n() {
        let train: Vec<usize> = (0..1000).collect();
        for (alpha, want) in [(0.05, 50), (0.0, 0), (1.0, 1000), (0.0199, 19)] {
            let p = sample_poison(&train, alpha, 7).unwrap();
            assert_eq!(p.len(), want, "alpha={alpha}");
        }
    }

    #[test]
    fn subset_of_training_indices_and_deterministic() {
        let train: Vec<usize> = (100..300).collect();
        let a = sample_poison(&train, 0.1, 3).unwrap();
        let b = sample_poison(&train, 0.1, 3).unwrap();
        assert_eq!(a.indices, b.indices);
        assert!(a.indices.iter().all(|i| train.contains(i)));
    }

    #[test]
    fn rejects_alpha_out_of_range() {
        assert!(sample_poison(&[1, 2, 3], 1.5, 0).is_err());
        assert!(sample_poison(&[1, 2, 3], -0.1, 0).is_err());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cardinality_grid(n in 1usize..2000, seed in 0u64..16) {
            let train: Vec<usize> = (0..n).collect();
            for alpha in [0.0, 0.01, 0.05, 0.1, 1.0] {
                let p = sample_poison(&train, alpha, seed).unwrap();
                prop_assert_eq!(p.len(), (alpha * n as f64).floor() as usize);
            }
        }
    }
}
