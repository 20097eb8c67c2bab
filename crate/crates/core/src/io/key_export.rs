//! Debug export of an [`EncodingKey`] as a sequence of raw matrices: the
//! plan (`j x 2` of width, dim), the permutation (`1 x f`), then each frame
//! as a complex `dim x width` matrix. The key is secret; this exists only for
//! test fixtures.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use super::matrix::{read_matrix, write_complex_matrix, write_matrix, StoredMatrix};
use crate::keys::{Block, EncodingKey, Frame, FramePlan, Permutation};
use crate::linalg::Matrix;

pub fn export_key(w: &mut impl Write, key: &EncodingKey) -> io::Result<()> {
    let blocks = key.plan().blocks();
    let plan = Matrix::from_fn(blocks.len(), 2, |i, j| if j == 0 { blocks[i].width } else { blocks[i].dim } as f64);
    write_matrix(w, &plan)?;
    let sigma = key.permutation().as_slice();
    write_matrix(
        w,
        &Matrix::from_vec(1, sigma.len(), sigma.iter().map(|&v| v as f64).collect()),
    )?;
    for frame in key.frames() {
        let mut data = Vec::with_capacity(2 * frame.dim() * frame.width());
        for r in 0..frame.dim() {
            for c in 0..frame.width() {
                let z = frame.get(r, c);
                data.push(z.re);
                data.push(z.im);
            }
        }
        write_complex_matrix(w, frame.dim(), frame.width(), &data)?;
    }
    Ok(())
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn import_key(mut r: impl Read) -> io::Result<EncodingKey> {
    let plan = match read_matrix(&mut r)? {
        StoredMatrix::Real(m) if m.cols() == 2 => m,
        _ => return Err(invalid("expected a j x 2 plan matrix")),
    };
    let blocks = (0..plan.rows())
        .map(|i| Block {
            width: plan[(i, 0)] as usize,
            dim: plan[(i, 1)] as usize,
        })
        .collect();
    let plan = FramePlan::new(blocks).map_err(|e| invalid(&e.to_string()))?;
    let sigma = match read_matrix(&mut r)? {
        StoredMatrix::Real(m) if m.rows() == 1 && m.cols() == plan.features() => {
            Permutation::from_vec_unchecked(m.as_slice().iter().map(|&v| v as usize).collect())
        }
        _ => return Err(invalid("expected a 1 x f permutation")),
    };
    let mut frames = Vec::with_capacity(plan.blocks().len());
    for b in plan.blocks() {
        match read_matrix(&mut r)? {
            StoredMatrix::Complex { rows, cols, data } if rows == b.dim && cols == b.width => {
                let mut entries = vec![Complex64::new(0.0, 0.0); rows * cols];
                for rr in 0..rows {
                    for cc in 0..cols {
                        let k = 2 * (rr * cols + cc);
                        entries[cc * rows + rr] = Complex64::new(data[k], data[k + 1]);
                    }
                }
                frames.push(Frame::from_column_major(rows, cols, entries));
            }
            _ => return Err(invalid("frame shape does not match plan")),
        }
    }
    Ok(EncodingKey::from_parts(plan, frames, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::{build_key, derive_plan, Seed};

    #[test]
    fn round_trip_is_bitwise() {
        let key = build_key(&Seed::new([9; 32]), &derive_plan(7, 3, 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        export_key(&mut buf, &key).unwrap();
        assert!(import_key(buf.as_slice()).unwrap().bitwise_eq(&key));
    }
}
