//! Header-less CSV for matrices and vectors.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a rectangular table of reals; ragged rows are rejected.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("{}: row {}: cannot parse {field:?}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::RaggedRow {
                    path: path.to_path_buf(),
                    row: i + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv file has no rows"));
    }
    Ok(rows)
}

/// Reads a vector stored either as one row or as one column.
pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let rows = read_matrix_csv(path)?;
    if rows.len() == 1 {
        Ok(rows.into_iter().next().unwrap_or_default())
    } else if rows.iter().all(|r| r.len() == 1) {
        Ok(rows.into_iter().map(|r| r[0]).collect())
    } else {
        Err(Error::InvalidArgument(format!(
            "{}: expected a single row or column",
            path.display()
        )))
    }
}

pub fn write_matrix_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
