//! Vertical attribute partitioning with record alignment.

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Per-client attribute shards sharing one record ordering; labels are
/// detached for the coordinator.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    pub shards: Vec<Matrix>,
    pub shard_schemas: Vec<Vec<ColumnKind>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub record_ids: Vec<u64>,
    pub split_widths: Vec<usize>,
}

impl PartitionedDataset {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Assigns contiguous column ranges to clients in order; `split_widths`
/// must sum to the dataset width.
pub fn partition_vertical(ds: &Dataset, split_widths: &[usize]) -> Result<PartitionedDataset> {
    let total: usize = split_widths.iter().sum();
    if total != ds.width() || split_widths.iter().any(|&w| w == 0) {
        return Err(Error::domain(format!(
            "split widths {:?} do not cover {} columns",
            split_widths,
            ds.width()
        )));
    }
    let mut shards = Vec::with_capacity(split_widths.len());
    let mut shard_schemas = Vec::with_capacity(split_widths.len());
    let mut start = 0;
    for &w in split_widths {
        shards.push(ds.features.col_block(start, w)?);
        shard_schemas.push(ds.schema[start..start + w].to_vec());
        start += w;
    }
    Ok(PartitionedDataset {
        shards,
        shard_schemas,
        labels: ds.labels.clone(),
        classes: ds.classes,
        record_ids: ds.record_ids.clone(),
        split_widths: split_widths.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_purchase_like;

    #[test]
    fn splits_into_expected_widths() {
        let ds = gen_purchase_like(50, 600, 10, 1).unwrap();
        let p = partition_vertical(&ds, &[300, 300]).unwrap();
        assert_eq!(p.num_clients(), 2);
        assert_eq!(p.shards[0].cols(), 300);
        assert_eq!(p.shards[1].cols(), 300);
        assert_eq!(p.labels, ds.labels);
    }

    #[test]
    fn single_client_shard_equals_source() {
        let ds = gen_purchase_like(20, 40, 4, 2).unwrap();
        let p = partition_vertical(&ds, &[40]).unwrap();
        assert_eq!(p.shards[0], ds.features);
    }

    #[test]
    fn concatenation_reconstructs_source_exactly() {
        let ds = gen_purchase_like(30, 50, 5, 3).unwrap();
        let p = partition_vertical(&ds, &[7, 20, 23]).unwrap();
        let refs: Vec<&Matrix> = p.shards.iter().collect();
        let cat = Matrix::hcat(&refs).unwrap();
        assert_eq!(cat, ds.features);
    }

    #[test]
    fn rejects_widths_not_summing_to_d() {
        let ds = gen_purchase_like(20, 40, 4, 2).unwrap();
        assert!(partition_vertical(&ds, &[20, 30]).is_err());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use crate::data::gen_purchase_like;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn reconstruction_identity_holds(
            seed in 0u64..64,
            w1 in 1usize..20,
            w2 in 1usize..20,
            w3 in 0usize..20,
        ) {
            let d = w1 + w2 + w3;
            prop_assume!(d >= 2);
            let ds = gen_purchase_like(24, d, 3, seed).unwrap();
            let widths: Vec<usize> = [w1, w2, w3].into_iter().filter(|&w| w > 0).collect();
            let p = partition_vertical(&ds, &widths).unwrap();
            let refs: Vec<&Matrix> = p.shards.iter().collect();
            prop_assert_eq!(Matrix::hcat(&refs).unwrap(), ds.features);
        }
    }
}
