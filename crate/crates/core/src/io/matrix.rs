//! Raw matrix container.
//!
//! ```text
//! "OKMX" | version u16 | dtype u8 (1 = f64, 2 = complex f64) | rows u64 | cols u64 | data
//! ```
//!
//! Data is row-major little-endian; complex entries are real then imaginary.

use std::io::{self, Read, Write};

use crate::linalg::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"OKMX";
pub const MATRIX_VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_C128: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum StoredMatrix {
    Real(Matrix),
    /// Interleaved `(re, im)` pairs, row-major.
    Complex {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

fn header(w: &mut impl Write, dtype: u8, rows: usize, cols: usize) -> io::Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&[dtype])?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())
}

fn body(w: &mut impl Write, data: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in data.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_matrix(w: &mut impl Write, m: &Matrix) -> io::Result<()> {
    header(w, DTYPE_F64, m.rows(), m.cols())?;
    body(w, m.as_slice())
}

/// Writes `rows x cols` complex entries given as interleaved pairs.
pub fn write_complex_matrix(
    w: &mut impl Write,
    rows: usize,
    cols: usize,
    interleaved: &[f64],
) -> io::Result<()> {
    assert_eq!(
        interleaved.len(),
        2 * rows * cols,
        "complex buffer has wrong length"
    );
    header(w, DTYPE_C128, rows, cols)?;
    body(w, interleaved)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_matrix(mut r: impl Read) -> io::Result<StoredMatrix> {
    let mut head = [0u8; 23];
    r.read_exact(&mut head)?;
    if &head[..4] != MATRIX_MAGIC {
        return Err(invalid("bad matrix magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != MATRIX_VERSION {
        return Err(invalid(format!("unsupported matrix version {version}")));
    }
    let dtype = head[6];
    let rows = u64::from_le_bytes(head[7..15].try_into().unwrap());
    let cols = u64::from_le_bytes(head[15..23].try_into().unwrap());
    let per = match dtype {
        DTYPE_F64 => 1u64,
        DTYPE_C128 => 2,
        t => return Err(invalid(format!("unknown dtype {t}"))),
    };
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(per))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| invalid("matrix too large"))?;

    let mut data = Vec::new();
    let mut buf = vec![0u8; 8 * 4096];
    while data.len() < count {
        let take = (count - data.len()).min(4096);
        r.read_exact(&mut buf[..8 * take])?;
        data.extend(
            buf[..8 * take]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
        );
    }
    let (rows, cols) = (rows as usize, cols as usize);
    Ok(if dtype == DTYPE_F64 {
        StoredMatrix::Real(Matrix::from_vec(rows, cols, data))
    } else {
        StoredMatrix::Complex { rows, cols, data }
    })
}
