//! CSV data, labels and Gram index maps.

use std::io::Write;
use std::path::Path;

use super::IoError;
use crate::encoder::DataMatrix;
use crate::kernel::RowOwner;
use crate::linalg::Matrix;

/// Reads a numeric CSV whose first row is a header.
pub fn read_csv_matrix(path: &Path) -> Result<DataMatrix, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let cols = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(IoError::format(
                path,
                format!("row {} has {} fields, expected {cols}", i + 1, rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                IoError::format(
                    path,
                    format!("row {}, column {}: not a number: {field:?}", i + 1, j + 1),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(DataMatrix::new(Matrix::from_vec(rows, cols, data))?)
}

pub fn write_csv_matrix(w: impl Write, m: &Matrix, header_prefix: &str) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record((0..m.cols()).map(|j| format!("{header_prefix}{j}")))?;
    for i in 0..m.rows() {
        wtr.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a one-column integer CSV; a non-numeric first row is a header.
pub fn read_labels(path: &Path) -> Result<Vec<i32>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 {
            return Err(IoError::format(
                path,
                format!("line {}: expected one column", i + 1),
            ));
        }
        match rec[0].parse::<i32>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(IoError::format(
                    path,
                    format!("line {}: not an integer label: {:?}", i + 1, &rec[0]),
                ))
            }
        }
    }
    Ok(out)
}

/// `row,owner,local` for every global Gram row.
pub fn write_index_map(w: impl Write, map: &[RowOwner]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["row", "owner", "local"])?;
    for (i, r) in map.iter().enumerate() {
        wtr.write_record([i.to_string(), r.owner.clone(), r.local.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
