//! File formats: the raw matrix container, CSV data and labels, PGM/PPM
//! images, Gram index maps and the debug key export.

use std::path::Path;

use thiserror::Error;

use crate::encoder::{flatten_images, DataMatrix, EncodeError};

pub mod key_export;
pub mod matrix;
pub mod pnm;
pub mod table;

pub use matrix::{read_matrix, write_complex_matrix, write_matrix, StoredMatrix};
pub use table::{read_csv_matrix, read_labels, write_csv_matrix, write_index_map};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

impl IoError {
    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }
}

/// Loads a data matrix from a directory of PGM/PPM images, a `.csv` file
/// with a header row, or a raw real matrix file.
pub fn load_data(path: &Path) -> Result<DataMatrix, IoError> {
    if path.is_dir() {
        return Ok(flatten_images(&pnm::read_image_dir(path)?)?);
    }
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return read_csv_matrix(path);
    }
    let file = std::fs::File::open(path)?;
    match read_matrix(std::io::BufReader::new(file)) {
        Ok(StoredMatrix::Real(m)) => Ok(DataMatrix::new(m)?),
        Ok(StoredMatrix::Complex { .. }) => Err(IoError::format(path, "expected a real matrix")),
        Err(e) => Err(IoError::format(path, e.to_string())),
    }
}
