//! Synthetic surrogate datasets, CSV ingestion, vertical partitioning,
//! mini-batch planning and poison-set sampling.

pub mod batch;
pub mod csv_io;
pub mod gen;
pub mod partition;
pub mod poison;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use batch::{make_batches, BatchPlan};
pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use gen::{gen_adult_like, gen_credit_like, gen_purchase_like};
pub use partition::{partition_vertical, PartitionedDataset};
pub use poison::{sample_poison, PoisonSet};

/// Declared kind of one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Binary,
    /// Integer-coded categories `0..k`.
    Categorical(usize),
    Numeric,
}

/// Aligned feature matrix with labels and a per-column schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub schema: Vec<ColumnKind>,
    pub record_ids: Vec<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    /// Checks every declared invariant: unique ids, labels in range, binary
    /// columns in {0,1}, categorical columns in their declared range.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.labels.len() != n || self.record_ids.len() != n {
            return Err(Error::domain("labels/ids length versus feature rows"));
        }
        if self.schema.len() != self.width() {
            return Err(Error::domain("schema length versus feature columns"));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if !self.record_ids.iter().all(|id| seen.insert(*id)) {
            return Err(Error::domain("duplicate record ids"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        for (j, kind) in self.schema.iter().enumerate() {
            for r in 0..n {
                let v = self.features.get(r, j);
                let ok = match kind {
                    ColumnKind::Binary => v == 0.0 || v == 1.0,
                    ColumnKind::Categorical(k) => {
                        v.fract() == 0.0 && v >= 0.0 && (v as usize) < *k
                    }
                    ColumnKind::Numeric => v.is_finite(),
                };
                if !ok {
                    return Err(Error::domain(format!(
                        "value {v} at row {r}, column {j} violates {kind:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seeded 80/20 record split, performed before any poison sampling.
/// Returns (train indices, eval indices) into the dataset rows.
pub fn split_train_eval(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let cut = (n as f64 * 0.8).floor() as usize;
    let eval = order.split_off(cut);
    (order, eval)
}
