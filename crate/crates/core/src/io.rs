//! CSV and JSON file helpers for the command line.
//!
//! CSV files are comma separated with '.' decimals. A single header row is
//! detected when any field of the first row is not a number.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{ProbDrError, Result};

/// A numeric table with its optional header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

fn data_error(path: &Path, msg: impl std::fmt::Display) -> ProbDrError {
    ProbDrError::Data(format!("{}: {msg}", path.display()))
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| data_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_error(path, e))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(|f| f.trim().parse::<f64>()).collect();
        if k == 0 && parsed.iter().any(|p| p.is_err()) {
            header = Some(record.iter().map(|f| f.trim().to_string()).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(data_error(path, format!("row {line}: expected {expected} fields, found {}", record.len())));
        }
        let mut row = Vec::with_capacity(expected);
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(data_error(path, format!("row {line}: field {} is not a finite number: {:?}", c + 1, &record[c])));
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_error(path, "no data rows"));
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Table { header, values: DMatrix::from_row_slice(flat.len() / d, d, &flat) })
}

/// Integer labels from the first column.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let table = read_csv(path)?;
    table
        .values
        .column(0)
        .iter()
        .enumerate()
        .map(|(r, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(data_error(path, format!("label {} is not a non-negative integer: {v}", r + 1)))
            }
        })
        .collect()
}

pub fn write_csv(path: &Path, header: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| data_error(path, e))?;
    writer.write_record(header).map_err(|e| data_error(path, e))?;
    for row in values.row_iter() {
        writer.write_record(row.iter().map(|v| v.to_string())).map_err(|e| data_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Column names `prefix1..prefixK`.
pub fn numbered_header(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ProbDrError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn header_detection() {
        let dir = tempfile::tempdir().unwrap();
        let with = read_csv(&write(&dir, "a.csv", "f1,f2\n1,2\n3,4.5\n")).unwrap();
        assert_eq!(with.header, Some(vec!["f1".to_string(), "f2".to_string()]));
        assert_eq!(with.values, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]));
        let without = read_csv(&write(&dir, "b.csv", "1,2\n3,4\n")).unwrap();
        assert_eq!(without.header, None);
        assert_eq!(without.values.nrows(), 2);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_csv(&write(&dir, "c.csv", "x,y\n1,2\n3,oops\n")).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        let err = read_csv(&write(&dir, "d.csv", "1,2\n3\n")).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(read_csv(&write(&dir, "e.csv", "a,b\n")).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-17, 1.0 / 3.0, 12345.678]);
        let p = dir.path().join("m.csv");
        write_csv(&p, &numbered_header("x", 2), &m).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.values, m);
        assert_eq!(back.header.unwrap(), vec!["x1", "x2"]);
    }
}
