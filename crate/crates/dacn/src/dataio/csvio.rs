//! CSV ingestion for simulator output and external datasets (e.g. TE-shaped
//! files with 53 measured variables). Mode and fault identity come from a
//! sidecar manifest or the `<mode>_<fault>.csv` filename convention.

use std::path::Path;

use ndarray::Array2;

use crate::cstr::{DatasetManifest, RawSeries};
use crate::error::{DacnError, Result};

/// Expected column layout: time column `t` followed by channel names. Pass
/// `None` to accept whatever header the file carries (the channel count is
/// then taken from the file).
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub channel_names: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn with_channels(names: &[&str]) -> Self {
        Self {
            channel_names: Some(names.iter().map(|s| s.to_string()).collect()),
        }
    }
}

/// Parse one series file. `mode_id`/`fault_id` default to the
/// `<mode>_<fault>.csv` filename convention when not given.
pub fn ingest_csv(
    path: &Path,
    schema: &CsvSchema,
    mode_id: Option<&str>,
    fault_id: Option<&str>,
    seed: u64,
) -> Result<RawSeries> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| DacnError::Csv {
        path: path_str.clone(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut cols = header.split(',').map(|s| s.trim().to_string());
    let t_col = cols.next().unwrap_or_default();
    let got_names: Vec<String> = cols.collect();
    if t_col != "t" {
        return Err(DacnError::CsvHeader {
            path: path_str,
            expected: vec!["t".into()],
            got: vec![t_col],
        });
    }
    if let Some(expected) = &schema.channel_names {
        if *expected != got_names {
            return Err(DacnError::CsvHeader {
                path: path_str,
                expected: expected.clone(),
                got: got_names,
            });
        }
    }
    let v = got_names.len();
    if v == 0 {
        return Err(DacnError::Csv {
            path: path_str,
            line: 1,
            msg: "no channel columns".into(),
        });
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != v + 1 {
            return Err(DacnError::Csv {
                path: path_str,
                line: i + 1,
                msg: format!("expected {} fields, got {}", v + 1, fields.len()),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64> {
            let x: f64 = s.trim().parse().map_err(|e| DacnError::Csv {
                path: path_str.clone(),
                line,
                msg: format!("bad number {s:?}: {e}"),
            })?;
            if !x.is_finite() {
                return Err(DacnError::Csv {
                    path: path_str.clone(),
                    line,
                    msg: format!("non-finite value {s:?}"),
                });
            }
            Ok(x)
        };
        times.push(parse(fields[0], i + 1)?);
        for f in &fields[1..] {
            values.push(parse(f, i + 1)?);
        }
    }

    let n = times.len();
    let channels = Array2::from_shape_vec((n, v), values)
        .map_err(|e| DacnError::Shape(e.to_string()))?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let (name_mode, name_fault) = stem.split_once('_').unwrap_or((stem, ""));
    Ok(RawSeries {
        times,
        channels,
        channel_names: got_names,
        fault_id: fault_id.unwrap_or(name_fault).to_string(),
        mode_id: mode_id.unwrap_or(name_mode).to_string(),
        seed,
    })
}

/// Load every series listed in a dataset directory's `manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<RawSeries>> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest =
        serde_json::from_slice(&std::fs::read(&manifest_path).map_err(|e| {
            DacnError::MissingData(format!("cannot read {}: {e}", manifest_path.display()))
        })?)?;
    let schema = CsvSchema {
        channel_names: Some(manifest.channel_names.clone()),
    };
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let series = ingest_csv(
            &dir.join(&entry.file),
            &schema,
            Some(&entry.mode_id),
            Some(&entry.fault_id),
            entry.seed,
        )?;
        if series.n_steps() != entry.n_rows {
            return Err(DacnError::Csv {
                path: entry.file.clone(),
                line: 0,
                msg: format!(
                    "manifest says {} rows, file has {}",
                    entry.n_rows,
                    series.n_steps()
                ),
            });
        }
        out.push(series);
    }
    Ok(out)
}
