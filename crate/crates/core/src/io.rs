//! Comma-separated numeric files: one sample per row, `.` decimals.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn parse_err(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a dense matrix. A first row containing any non-numeric field is
/// taken as a header and skipped. Reported row numbers are 1-based file lines.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| parse_err(path, format!("line {line}: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, usize>> = record
            .iter()
            .enumerate()
            .map(|(col, field)| field.parse::<f64>().map_err(|_| col))
            .collect();
        if idx == 0 && parsed.iter().any(|p| p.is_err()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    path,
                    format!("line {line}: expected {w} fields, found {}", record.len()),
                ));
            }
            _ => {}
        }
        for p in parsed {
            match p {
                Ok(v) if v.is_finite() => data.push(v),
                Ok(_) => return Err(parse_err(path, format!("line {line}: non-finite value"))),
                Err(col) => {
                    return Err(parse_err(
                        path,
                        format!(
                            "line {line}, column {}: cannot parse {:?} as a number",
                            col + 1,
                            &record[col]
                        ),
                    ));
                }
            }
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| parse_err(path, "no numeric rows".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Read a vector stored as a single column or a single row.
pub fn read_csv_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let mat = read_csv_matrix(path)?;
    match mat.shape() {
        (_, 1) => Ok(mat.column(0).into_owned()),
        (1, _) => Ok(mat.row(0).transpose()),
        (r, c) => Err(parse_err(
            path,
            format!("expected a single column or row, found {r}×{c}"),
        )),
    }
}

/// Write row-major, shortest round-trip formatting, LF line endings.
pub fn write_csv_matrix(path: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for row in x.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn write_csv_vector(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    write_csv_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}
