//! CSV and JSON reading and writing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use eqrgmm::Dataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> CliResult<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        CliError::Parse(format!(
            "{}, line {line}, column '{column}': '{cell}' is not a number",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::Parse(format!(
            "{}, line {line}, column '{column}': value must be finite",
            path.display()
        )));
    }
    Ok(v)
}

fn record_line(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map_or(fallback, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| format!(", line {}", p.line())).unwrap_or_default();
    CliError::Parse(format!("{}{line}: {e}", path.display()))
}

/// Reads a dataset with header `x1, ..., xp, y`. Columns may appear in any
/// order; extra columns are rejected.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let position = |name: &str| names.iter().position(|h| *h == name);
    let y_col = position("y")
        .ok_or_else(|| CliError::Parse(format!("{}: missing column 'y' in header", path.display())))?;
    let p = names.len() - 1;
    if p == 0 {
        return Err(CliError::Parse(format!("{}: missing column 'x1' in header", path.display())));
    }
    let mut x_cols = Vec::with_capacity(p);
    for j in 1..=p {
        let name = format!("x{j}");
        let col = position(&name).ok_or_else(|| {
            CliError::Parse(format!("{}: missing column '{name}' in header", path.display()))
        })?;
        x_cols.push((col, name));
    }

    let mut covariates = Vec::new();
    let mut responses = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record, i as u64 + 2);
        for (col, name) in &x_cols {
            covariates.push(parse_cell(path, line, name, &record[*col])?);
        }
        responses.push(parse_cell(path, line, "y", &record[y_col])?);
    }
    if responses.is_empty() {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new_unchecked_rank(covariates, responses, p)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for (row, y) in data.rows().zip(data.responses()) {
        let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
        fields.push(y.to_string());
        w.write_record(&fields).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a one-dimensional sample: the column named `y` if present, else the
/// only column.
pub fn read_sample(path: &Path) -> CliResult<Vec<f64>> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let (col, name) = match headers.iter().position(|h| h == "y") {
        Some(c) => (c, "y".to_string()),
        None if headers.len() == 1 => (0, headers[0].to_string()),
        None => {
            return Err(CliError::Parse(format!(
                "{}: missing column 'y' in header",
                path.display()
            )))
        }
    };
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record, i as u64 + 2);
        out.push(parse_cell(path, line, &name, &record[col])?);
    }
    if out.is_empty() {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

pub fn write_sample(path: &Path, values: &[f64]) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "y")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes rows of already formatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a comma-separated list of numbers such as `4,-1,3`.
pub fn parse_list<T: std::str::FromStr>(field: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse()
                .map_err(|_| CliError::field(field, format!("cannot parse '{s}' in list '{text}'")))
        })
        .collect()
}
