//! Read-only feature tap: the adversary's view of the victim's intermediate
//! outputs for poisoned records, optionally mirrored to a JSONL evidence file.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::PoisonSet;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Features captured for the poisoned records of one (epoch, batch, client).
#[derive(Debug, Clone)]
pub struct TapRecord {
    pub epoch: usize,
    pub batch_index: usize,
    pub client: usize,
    /// Global record indices, in batch order.
    pub records: Vec<usize>,
    pub features: Matrix,
}

#[derive(Serialize, Deserialize)]
struct TapLine {
    epoch: usize,
    batch: usize,
    client: usize,
    records: Vec<usize>,
    width: usize,
    rows_b64: String,
}

/// Collects the victim's feature rows for poisoned records.
pub struct FeatureTap {
    victim: usize,
    poison: BTreeSet<usize>,
    pub records: Vec<TapRecord>,
    writer: Option<BufWriter<File>>,
}

impl FeatureTap {
    pub fn new(victim: usize, poison: &PoisonSet, jsonl_path: Option<&Path>) -> Result<Self> {
        let writer = match jsonl_path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        Ok(FeatureTap {
            victim,
            poison: poison.indices.clone(),
            records: Vec::new(),
            writer,
        })
    }

    pub fn victim(&self) -> usize {
        self.victim
    }

    pub fn poison(&self) -> &BTreeSet<usize> {
        &self.poison
    }

    /// Called once per (epoch, batch, client) with the batch's global record
    /// ids and the emitted feature rows. Only the victim's poisoned rows are
    /// retained.
    pub fn observe(
        &mut self,
        epoch: usize,
        batch_index: usize,
        client: usize,
        record_ids: &[usize],
        features: &Matrix,
    ) -> Result<()> {
        if client != self.victim {
            return Ok(());
        }
        if record_ids.len() != features.rows() {
            return Err(Error::Protocol(format!(
                "tap saw {} record ids for {} feature rows",
                record_ids.len(),
                features.rows()
            )));
        }
        let keep: Vec<usize> = (0..record_ids.len())
            .filter(|&i| self.poison.contains(&record_ids[i]))
            .collect();
        if keep.is_empty() {
            return Ok(());
        }
        let rows = features.select_rows(&keep)?;
        let records: Vec<usize> = keep.iter().map(|&i| record_ids[i]).collect();
        if let Some(w) = &mut self.writer {
            let mut bytes = Vec::with_capacity(rows.data().len() * 8);
            for v in rows.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let line = TapLine {
                epoch,
                batch: batch_index,
                client,
                records: records.clone(),
                width: rows.cols(),
                rows_b64: B64.encode(bytes),
            };
            serde_json::to_writer(&mut *w, &line)?;
            writeln!(w)?;
        }
        self.records.push(TapRecord {
            epoch,
            batch_index,
            client,
            records,
            features: rows,
        });
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }
}

/// Parses a feature-tap evidence file back into tap records.
pub fn read_tap_jsonl(path: &Path) -> Result<Vec<TapRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TapLine = serde_json::from_str(&line)
            .map_err(|e| Error::Ingest(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        let bytes = B64
            .decode(parsed.rows_b64.as_bytes())
            .map_err(|e| Error::Ingest(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Ingest(format!(
                "{}: line {}: feature payload not f64-aligned",
                path.display(),
                i + 1
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rows = parsed.records.len();
        out.push(TapRecord {
            epoch: parsed.epoch,
            batch_index: parsed.batch,
            client: parsed.client,
            records: parsed.records,
            features: Matrix::from_vec(rows, parsed.width, values)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_poison;

    #[test]
    fn tap_keeps_only_victim_poison_rows_and_round_trips() {
        let train: Vec<usize> = (0..10).collect();
        let poison = sample_poison(&train, 0.3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.jsonl");
        let mut tap = FeatureTap::new(0, &poison, Some(&path)).unwrap();

        let ids: Vec<usize> = (0..10).collect();
        let features = Matrix::from_fn(10, 4, |r, c| (r * 4 + c) as f64);
        tap.observe(1, 0, 0, &ids, &features).unwrap();
        tap.observe(1, 0, 1, &ids, &features).unwrap(); // non-victim, ignored
        tap.flush().unwrap();

        assert_eq!(tap.records.len(), 1);
        assert_eq!(tap.records[0].records.len(), poison.len());
        for (row, rec) in tap.records[0]
            .features
            .data()
            .chunks(4)
            .zip(&tap.records[0].records)
        {
            assert_eq!(row, features.row(*rec));
        }

        let parsed = read_tap_jsonl(&path).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].records, tap.records[0].records);
        assert_eq!(parsed[0].features, tap.records[0].features);
    }
}
