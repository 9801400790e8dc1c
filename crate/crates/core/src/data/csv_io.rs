//! CSV ingestion and export. Dialect: comma-separated, header row required,
//! UTF-8, `.` decimal point, feature columns first and the label column last.

use std::path::Path;

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Declared layout of a CSV file: one kind per feature column plus the
/// label class count. The label is the final column.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub features: Vec<ColumnKind>,
    pub classes: usize,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let header_len = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("{}: header: {e}", path.display())))?
        .len();
    let d = schema.features.len();
    if header_len != d + 1 {
        return Err(Error::Ingest(format!(
            "{}: header has {} columns, schema declares {} features plus a label",
            path.display(),
            header_len,
            d
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Ingest(format!("{}: row {}: {e}", path.display(), row_idx + 1)))?;
        if record.len() != d + 1 {
            return Err(Error::Ingest(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                row_idx + 1,
                record.len(),
                d + 1
            )));
        }
        for (col_idx, field) in record.iter().enumerate() {
            if field.trim().is_empty() {
                return Err(Error::Ingest(format!(
                    "{}: missing value at row {}, column {}",
                    path.display(),
                    row_idx + 1,
                    col_idx
                )));
            }
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Ingest(format!(
                    "{}: unparseable value {:?} at row {}, column {}",
                    path.display(),
                    field,
                    row_idx + 1,
                    col_idx
                ))
            })?;
            let bad = |why: &str| {
                Error::Ingest(format!(
                    "{}: value {value} at row {}, column {col_idx} {why}",
                    path.display(),
                    row_idx + 1
                ))
            };
            if col_idx < d {
                match schema.features[col_idx] {
                    ColumnKind::Binary if value != 0.0 && value != 1.0 => {
                        return Err(bad("is not binary"))
                    }
                    ColumnKind::Categorical(k)
                        if value.fract() != 0.0 || value < 0.0 || value as usize >= k =>
                    {
                        return Err(bad(&format!("outside categorical range 0..{k}")))
                    }
                    _ if !value.is_finite() => return Err(bad("is not finite")),
                    _ => {}
                }
                data.push(value);
            } else {
                if value.fract() != 0.0 || value < 0.0 || value as usize >= schema.classes {
                    return Err(bad(&format!(
                        "outside label range 0..{}",
                        schema.classes
                    )));
                }
                labels.push(value as usize);
            }
        }
    }
    let n = labels.len();
    let ds = Dataset {
        features: Matrix::from_vec(n, d, data)?,
        labels,
        classes: schema.classes,
        schema: schema.features.clone(),
        record_ids: (0..n as u64).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset in the same dialect `load_csv` reads.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..ds.width())
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for r in 0..ds.len() {
        let mut fields: Vec<String> = ds.features.row(r).iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", ds.labels[r]));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> CsvSchema {
        CsvSchema {
            features: vec![ColumnKind::Binary, ColumnKind::Binary],
            classes: 2,
        }
    }

    #[test]
    fn loads_a_toy_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "a,b,label\n0,1,1\n1,1,0\n0,0,1\n").unwrap();
        let ds = load_csv(&path, &toy_schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.labels, vec![1, 0, 1]);
    }

    #[test]
    fn rejects_wrong_header_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n0,1\n").unwrap();
        let err = load_csv(&path, &toy_schema()).unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    #[test]
    fn rejects_missing_values_naming_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(&path, "a,b,label\n0,,1\n").unwrap();
        let err = load_csv(&path, &toy_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("column 1"), "{msg}");
    }

    #[test]
    fn round_trip_preserves_features_and_labels() {
        let ds = crate::data::gen_adult_like(40, &[5, 3, 7], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv(&ds, &path).unwrap();
        let schema = CsvSchema {
            features: ds.schema.clone(),
            classes: ds.classes,
        };
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
    }
}
