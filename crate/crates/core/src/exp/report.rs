//! Loading finished runs and emitting plot-ready CSV: the accuracy-privacy
//! scatter and per-epoch curves.

use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exp::runner::{summarize, RunRow, RunSummary};

/// One run loaded back from disk, summary re-validated against the rows.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub arm: String,
    pub config_hash: String,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
}

fn parse_hash_line(line: &str, path: &Path) -> Result<String> {
    let v: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Error::Report(format!("{}: hash line: {e}", path.display())))?;
    v.get("config_hash")
        .and_then(|h| h.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Report(format!("{}: missing config_hash", path.display())))
}

/// Loads one run directory and checks that the stored summary matches a
/// recomputation from the detail rows.
pub fn load_run(dir: &Path, arm: &str) -> Result<LoadedRun> {
    let results = dir.join("results.jsonl");
    let file = std::fs::File::open(&results)
        .map_err(|e| Error::Report(format!("{}: {e}", results.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let hash_line = lines
        .next()
        .ok_or_else(|| Error::Report(format!("{}: empty file", results.display())))??;
    let config_hash = parse_hash_line(&hash_line, &results)?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str::<RunRow>(&line)
                .map_err(|e| Error::Report(format!("{}: {e}", results.display())))?,
        );
    }
    let recomputed = summarize(&rows)?;
    let stored = read_summary(&dir.join("summary.csv"))?;
    if stored.privacy_metric_kind != recomputed.privacy_metric_kind
        || !opt_eq(stored.min_privacy, recomputed.min_privacy)
        || stored.final_accuracy.to_bits() != recomputed.final_accuracy.to_bits()
    {
        return Err(Error::Report(format!(
            "{}: stored summary does not match the detail rows",
            dir.display()
        )));
    }
    Ok(LoadedRun {
        arm: arm.to_string(),
        config_hash,
        rows,
        summary: stored,
    })
}

fn opt_eq(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Report(format!("{}: missing header", path.display())))?;
    if header != "privacy_metric_kind,min_privacy,final_accuracy,accuracy_drop_vs_baseline" {
        return Err(Error::Report(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let row = lines
        .next()
        .ok_or_else(|| Error::Report(format!("{}: missing summary row", path.display())))?;
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != 4 {
        return Err(Error::Report(format!(
            "{}: expected 4 fields, got {}",
            path.display(),
            fields.len()
        )));
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|e| Error::Report(format!("{}: {e}", path.display())))
        }
    };
    let kind = if fields[0].is_empty() {
        None
    } else {
        serde_json::from_str(&format!("\"{}\"", fields[0]))
            .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?
    };
    Ok(RunSummary {
        privacy_metric_kind: kind,
        min_privacy: parse_opt(fields[1])?,
        final_accuracy: fields[2]
            .parse()
            .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?,
        accuracy_drop_vs_baseline: parse_opt(fields[3])?,
    })
}

/// Loads every subdirectory of `runs_dir` that holds a results.jsonl.
pub fn load_runs(runs_dir: &Path) -> Result<Vec<LoadedRun>> {
    let mut runs = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(runs_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("results.jsonl").exists())
        .collect();
    entries.sort();
    for dir in entries {
        let arm = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("run")
            .to_string();
        runs.push(load_run(&dir, &arm)?);
    }
    if runs.is_empty() {
        return Err(Error::Report(format!(
            "no runs found under {}",
            runs_dir.display()
        )));
    }
    Ok(runs)
}

/// Emits scatter.csv (one row per arm: final accuracy against the
/// leakage-inverted minimum privacy) and curves.csv (per-epoch accuracy and
/// raw privacy values).
pub fn emit_plot_data(runs: &[LoadedRun], out_dir: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Report("no runs to report".to_string()));
    }
    let kinds: Vec<_> = runs
        .iter()
        .filter_map(|r| r.summary.privacy_metric_kind)
        .collect();
    if kinds.is_empty() {
        return Err(Error::Report(
            "no privacy measurements in any run".to_string(),
        ));
    }
    if kinds.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Report(
            "mixed privacy metric kinds across runs".to_string(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut hasher = Sha256::new();
    for r in runs {
        hasher.update(r.config_hash.as_bytes());
    }
    let combined: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let mut scatter = std::fs::File::create(out_dir.join("scatter.csv"))?;
    writeln!(scatter, "# config_hash={combined}")?;
    writeln!(scatter, "arm,final_accuracy,privacy_level")?;
    for r in runs {
        let kind = r.summary.privacy_metric_kind.ok_or_else(|| {
            Error::Report(format!("run `{}` has no privacy measurements", r.arm))
        })?;
        let min = r.summary.min_privacy.unwrap();
        writeln!(
            scatter,
            "{},{},{}",
            r.arm,
            r.summary.final_accuracy,
            kind.privacy_level(min)
        )?;
    }

    let mut curves = std::fs::File::create(out_dir.join("curves.csv"))?;
    writeln!(curves, "# config_hash={combined}")?;
    writeln!(curves, "arm,epoch,eval_accuracy,privacy_value")?;
    for r in runs {
        for row in &r.rows {
            writeln!(
                curves,
                "{},{},{},{}",
                r.arm,
                row.epoch,
                row.eval_accuracy_or_auc,
                row.privacy_value.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
    }
    Ok(())
}
