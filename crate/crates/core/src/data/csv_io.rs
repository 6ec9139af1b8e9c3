//! CSV ingestion: `timestamp,<m1>,...,<mN>` data files with an optional
//! sibling `<stem>.labels.csv` holding `timestamp,label`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::frame::SeriesFrame;
use crate::error::{Error, Result};
use crate::io::atomic_write;

/// Sibling label path: `dir/entity.csv` → `dir/entity.labels.csv`.
pub fn label_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    path.with_file_name(format!("{stem}.labels.csv"))
}

fn ingest_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingest { path: path.to_path_buf(), line, message: message.into() }
}

/// Loads a data CSV and, if present, its sibling label file.
///
/// Empty or `NaN` cells count as missing: forward-filled, with a leading gap
/// back-filled. A metric with no observed value at all is rejected.
pub fn load_csv(path: &Path) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(File::open(path)?);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("timestamp") {
        return Err(ingest_err(path, 1, "header must start with `timestamp`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = names.len();
    if n < 2 {
        return Err(ingest_err(path, 1, format!("need at least 2 metric columns, found {n}")));
    }

    let mut rows: Vec<(usize, i64, Vec<Option<f64>>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != n + 1 {
            return Err(ingest_err(path, line, format!("expected {} fields, found {}", n + 1, record.len())));
        }
        let ts: i64 =
            record[0].parse().map_err(|_| ingest_err(path, line, format!("bad timestamp {:?}", &record[0])))?;
        let mut vals = Vec::with_capacity(n);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                vals.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest_err(path, line, format!("unparsable value {cell:?} in column {}", names[j])))?;
            if v.is_nan() {
                vals.push(None);
            } else if !v.is_finite() {
                return Err(ingest_err(path, line, format!("infinite value in column {}", names[j])));
            } else {
                vals.push(Some(v));
            }
        }
        rows.push((line, ts, vals));
    }
    if rows.is_empty() {
        return Err(ingest_err(path, 2, "no data rows"));
    }
    rows.sort_by_key(|r| r.1);
    for w in rows.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(ingest_err(path, w[1].0, format!("duplicate timestamp {}", w[1].1)));
        }
    }
    if rows.len() >= 2 {
        let step = rows[1].1 - rows[0].1;
        for w in rows.windows(2) {
            if w[1].1 - w[0].1 != step {
                return Err(ingest_err(
                    path,
                    w[1].0,
                    format!("non-constant spacing: expected step {step}, found {}", w[1].1 - w[0].1),
                ));
            }
        }
    }

    let timestamps: Vec<i64> = rows.iter().map(|r| r.1).collect();
    let mut values = Vec::with_capacity(n);
    for (j, name) in names.iter().enumerate() {
        let col: Vec<Option<f64>> = rows.iter().map(|r| r.2[j]).collect();
        let first = col
            .iter()
            .flatten()
            .next()
            .copied()
            .ok_or_else(|| Error::Data(format!("{}: metric {name} is entirely missing", path.display())))?;
        let mut last = first;
        values.push(
            col.into_iter()
                .map(|v| {
                    if let Some(x) = v {
                        last = x;
                    }
                    last
                })
                .collect::<Vec<f64>>(),
        );
    }

    let lpath = label_path(path);
    let labels = if lpath.exists() { Some(load_labels(&lpath, &timestamps)?) } else { None };
    SeriesFrame::new(names, timestamps, values, labels)
}

fn load_labels(path: &Path, timestamps: &[i64]) -> Result<Vec<u8>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(File::open(path)?);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "label"] {
        return Err(ingest_err(path, 1, "label header must be `timestamp,label`"));
    }
    let mut by_ts = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ts: i64 =
            record[0].parse().map_err(|_| ingest_err(path, line, format!("bad timestamp {:?}", &record[0])))?;
        let label: u8 = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(ingest_err(path, line, format!("label must be 0 or 1, found {other:?}"))),
        };
        if by_ts.insert(ts, label).is_some() {
            return Err(ingest_err(path, line, format!("duplicate timestamp {ts}")));
        }
    }
    timestamps
        .iter()
        .map(|ts| by_ts.get(ts).copied())
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| Error::Labels { path: path.to_path_buf(), message: "label coverage incomplete".into() })
}

/// Writes the data CSV (and the label sibling when the frame has labels).
pub fn save_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write!(buf, "timestamp")?;
    for name in frame.metric_names() {
        write!(buf, ",{name}")?;
    }
    writeln!(buf)?;
    for (t, ts) in frame.timestamps().iter().enumerate() {
        write!(buf, "{ts}")?;
        for m in frame.values() {
            write!(buf, ",{}", m[t])?;
        }
        writeln!(buf)?;
    }
    atomic_write(path, &buf)?;
    if let Some(labels) = frame.labels() {
        let mut buf = Vec::new();
        writeln!(buf, "timestamp,label")?;
        for (ts, l) in frame.timestamps().iter().zip(labels) {
            writeln!(buf, "{ts},{l}")?;
        }
        atomic_write(&label_path(path), &buf)?;
    }
    Ok(())
}
