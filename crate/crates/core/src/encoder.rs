//! Participant-side preprocessing and randomized encoding.
//!
//! A data row `a` (length `f`) is encoded as `a' = (a σᵀ) Γ†`, a complex row
//! of length `f + k`. `Γ†` is never materialized: each permuted block slice
//! is multiplied by `O_i†`, which costs
//! `Σ width_i · dim_i` multiply-adds per row.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::keys::{EncodingKey, Frame};
use crate::linalg::Matrix;

/// Rows encoded together; each tile is permuted once, then every frame
/// block is applied to it.
const ROW_TILE: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),
}

/// `n x h x w x c` image stack, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        n: usize,
        h: usize,
        w: usize,
        c: usize,
        data: Vec<f64>,
    ) -> Result<Self, EncodeError> {
        if h == 0 || w == 0 || c == 0 {
            return Err(EncodeError::InvalidShape(format!("{n}x{h}x{w}x{c}")));
        }
        if data.len() != n * h * w * c {
            return Err(EncodeError::InvalidShape(format!(
                "{n}x{h}x{w}x{c} needs {} values, got {}",
                n * h * w * c,
                data.len()
            )));
        }
        Ok(Self {
            shape: [n, h, w, c],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn get(&self, i: usize, r: usize, col: usize, ch: usize) -> f64 {
        let [_, h, w, c] = self.shape;
        self.data[((i * h + r) * w + col) * c + ch]
    }
}

/// Flattens each image row-major (height, then width, then channel).
pub fn flatten_images(t: &ImageTensor) -> Result<DataMatrix, EncodeError> {
    let [n, h, w, c] = t.shape;
    if n < 2 {
        return Err(EncodeError::TooFewSamples(n));
    }
    DataMatrix::new(Matrix::from_vec(n, h * w * c, t.data.clone()))
}

/// Real `n x f` plaintext matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix(Matrix);

impl DataMatrix {
    pub fn new(m: Matrix) -> Result<Self, EncodeError> {
        if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
            let cols = m.cols().max(1);
            return Err(EncodeError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EncodeError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(EncodeError::DimensionMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(Matrix::from_vec(rows.len(), cols, rows.concat()))
    }

    pub fn n_rows(&self) -> usize {
        self.0.rows()
    }

    pub fn n_features(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Multiplies every entry by `factor` (e.g. `1/255` for 8-bit pixels).
    pub fn scaled(&self, factor: f64) -> Self {
        let data = self.0.as_slice().iter().map(|v| v * factor).collect();
        Self(Matrix::from_vec(self.0.rows(), self.0.cols(), data))
    }

    /// Vertical concatenation. Panics if feature counts differ.
    pub fn vstack(parts: &[&DataMatrix]) -> Self {
        let cols = parts.first().map_or(0, |p| p.n_features());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.n_features(), cols, "feature counts differ");
            data.extend_from_slice(p.0.as_slice());
            rows += p.n_rows();
        }
        Self(Matrix::from_vec(rows, cols, data))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let cols: Vec<usize> = (0..self.n_features()).collect();
        Self(self.0.select(idx, &cols))
    }
}

/// Complex `n x (f+k)` encoded matrix; the only thing a server ever sees.
///
/// Stored row-major with interleaved `(re, im)` pairs, so a row is a real
/// slice of length `2 * width`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    owner: String,
    n_rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl EncodedMatrix {
    pub fn empty(owner: impl Into<String>, width: usize) -> Self {
        Self {
            owner: owner.into(),
            n_rows: 0,
            width,
            data: Vec::new(),
        }
    }

    /// Wraps an interleaved buffer, rejecting wrong lengths and non-finite
    /// values.
    pub fn from_interleaved(
        owner: impl Into<String>,
        n_rows: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, EncodeError> {
        let expected = n_rows
            .checked_mul(width)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| EncodeError::InvalidShape(format!("{n_rows}x{width} overflows")))?;
        if data.len() != expected {
            return Err(EncodeError::InvalidShape(format!(
                "{n_rows}x{width} complex matrix needs {expected} reals, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let per_row = (2 * width).max(1);
            return Err(EncodeError::NonFinite {
                row: pos / per_row,
                col: (pos % per_row) / 2,
            });
        }
        Ok(Self {
            owner: owner.into(),
            n_rows,
            width,
            data,
        })
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn with_owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = owner.into();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Interleaved `(re, im)` row of length `2 * width`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w2 = 2 * self.width;
        &self.data[i * w2..(i + 1) * w2]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row(i);
        Complex64::new(r[2 * j], r[2 * j + 1])
    }

    pub fn as_interleaved(&self) -> &[f64] {
        &self.data
    }

    pub fn into_interleaved(self) -> Vec<f64> {
        self.data
    }

    /// Appends the rows of `other`. Panics on width mismatch.
    pub fn extend(&mut self, other: &EncodedMatrix) {
        assert_eq!(self.width, other.width, "encoded widths differ");
        self.data.extend_from_slice(&other.data);
        self.n_rows += other.n_rows;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * 2 * self.width);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            owner: self.owner.clone(),
            n_rows: idx.len(),
            width: self.width,
            data,
        }
    }
}

/// Where one frame block reads its input and writes its output.
struct BlockSpan<'k> {
    /// Offset of the block in the permuted feature vector.
    in_offset: usize,
    /// Offset of the block in the interleaved output row.
    out_offset: usize,
    frame: &'k Frame,
}

fn block_spans(key: &EncodingKey) -> Vec<BlockSpan<'_>> {
    let mut in_offset = 0;
    let mut out_offset = 0;
    key.frames()
        .iter()
        .map(|frame| {
            let span = BlockSpan {
                in_offset,
                out_offset,
                frame,
            };
            in_offset += frame.width();
            out_offset += 2 * frame.dim();
            span
        })
        .collect()
}

/// Column-major frame entries viewed as a `width x 2·dim` row-major real
/// matrix: row `c` is column `c`, interleaved.
fn frame_as_real(frame: &Frame) -> &[f64] {
    let e = frame.entries();
    // SAFETY: Complex64 is repr(C) with two f64 fields, so a slice of n
    // complex values has the layout of 2n f64 values.
    unsafe { std::slice::from_raw_parts(e.as_ptr().cast::<f64>(), 2 * e.len()) }
}

/// Encodes one tile of rows into `dst` (interleaved, `2·width` per row).
fn encode_tile(
    rows: &[f64],
    dst: &mut [f64],
    sigma: &[usize],
    spans: &[BlockSpan<'_>],
    permuted: &mut Vec<f64>,
) {
    let f = sigma.len();
    let tile = rows.len() / f;
    let stride = dst.len() / tile;
    permuted.clear();
    permuted.reserve(tile * f);
    for row in rows.chunks_exact(f) {
        permuted.extend(sigma.iter().map(|&s| row[s]));
    }
    for span in spans {
        let (w, dim) = (span.frame.width(), span.frame.dim());
        // SAFETY: A is the `tile x w` slice of the permuted tile at stride f;
        // B is the `w x 2dim` frame view; C is `tile x 2dim` inside `dst` at
        // stride 2*width, and out_offset + 2dim <= 2*width.
        unsafe {
            matrixmultiply::dgemm(
                tile,
                w,
                2 * dim,
                1.0,
                permuted.as_ptr().add(span.in_offset),
                f as isize,
                1,
                frame_as_real(span.frame).as_ptr(),
                (2 * dim) as isize,
                1,
                0.0,
                dst.as_mut_ptr().add(span.out_offset),
                stride as isize,
                1,
            );
        }
        // Multiplying by the frame rather than its conjugate leaves the
        // imaginary parts negated.
        for row in dst.chunks_exact_mut(stride) {
            let block = &mut row[span.out_offset..span.out_offset + 2 * dim];
            for im in block.iter_mut().skip(1).step_by(2) {
                *im = -*im;
            }
        }
    }
}

/// Encodes `data` under `key`: `A' = A σᵀ Γ†`.
///
/// Row tiles are encoded in parallel; each output entry is a single
/// fixed-order dot product, so the result does not depend on the schedule.
pub fn encode(
    data: &DataMatrix,
    key: &EncodingKey,
    owner: impl Into<String>,
) -> Result<EncodedMatrix, EncodeError> {
    let mut out = EncodedMatrix::empty(owner, key.encoded_width());
    encode_into(data, key, &mut out)?;
    Ok(out)
}

/// Like [`encode`], but writes into `out`, reusing its allocation. The
/// owner of `out` is kept.
pub fn encode_into(
    data: &DataMatrix,
    key: &EncodingKey,
    out: &mut EncodedMatrix,
) -> Result<(), EncodeError> {
    let f = key.plan().features();
    if data.n_features() != f {
        return Err(EncodeError::DimensionMismatch {
            expected: f,
            got: data.n_features(),
        });
    }
    let width = key.encoded_width();
    let n = data.n_rows();
    out.width = width;
    out.n_rows = n;
    // Every entry is overwritten below, so stale values need no clearing.
    out.data.resize(n * 2 * width, 0.0);
    if n == 0 {
        return Ok(());
    }
    let spans = block_spans(key);
    let sigma = key.permutation().as_slice();
    let src = data.matrix().as_slice();
    let stride = 2 * width;

    // One contiguous group of tiles per worker, so each permute buffer is
    // allocated once.
    let tiles = n.div_ceil(ROW_TILE);
    let group = tiles.div_ceil(rayon::current_num_threads()) * ROW_TILE;
    out.data
        .par_chunks_mut(group * stride)
        .zip(src.par_chunks(group * f))
        .for_each(|(dst, rows)| {
            let mut permuted = Vec::new();
            for (dst, rows) in dst
                .chunks_mut(ROW_TILE * stride)
                .zip(rows.chunks(ROW_TILE * f))
            {
                encode_tile(rows, dst, sigma, &spans, &mut permuted);
            }
        });

    Ok(())
}

/// Encodes rows added after the initial submission. Identical to
/// [`encode`]; empty input is allowed and yields a `0 x (f+k)` matrix.
pub fn encode_incremental(
    new_data: &DataMatrix,
    key: &EncodingKey,
    owner: impl Into<String>,
) -> Result<EncodedMatrix, EncodeError> {
    encode(new_data, key, owner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::{build_key, derive_plan, Seed};

    fn key(f: usize, bs: usize, red: usize, s: u8) -> EncodingKey {
        build_key(&Seed::new([s; 32]), &derive_plan(f, bs, red).unwrap()).unwrap()
    }

    /// Direct formula a'_j = Σ_c a_c conj(Γ[j, σ⁻¹ ...]) through the dense Γ.
    fn reference_encode(row: &[f64], key: &EncodingKey) -> Vec<Complex64> {
        let f = key.plan().features();
        let w = key.encoded_width();
        let g = key.dense_gamma();
        let sigma = key.permutation().as_slice();
        let permuted: Vec<f64> = sigma.iter().map(|&s| row[s]).collect();
        (0..w)
            .map(|j| (0..f).map(|c| g[j * f + c].conj() * permuted[c]).sum())
            .collect()
    }

    fn dot_re(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn flatten_identity_reshape() {
        let t = ImageTensor::new(2, 1, 1, 1, vec![1.5, -2.0]).unwrap();
        let d = flatten_images(&t).unwrap();
        assert_eq!(d.matrix().as_slice(), &[1.5, -2.0]);
        assert_eq!(d.n_features(), 1);
    }

    #[test]
    fn flatten_requires_two_images() {
        let t = ImageTensor::new(1, 2, 2, 1, vec![0.0; 4]).unwrap();
        assert_eq!(flatten_images(&t), Err(EncodeError::TooFewSamples(1)));
    }

    #[test]
    fn flatten_index_order() {
        let (n, h, w, c) = (3, 2, 2, 3);
        let data: Vec<f64> = (0..n * h * w * c).map(|v| v as f64 * 0.5).collect();
        let t = ImageTensor::new(n, h, w, c, data).unwrap();
        let d = flatten_images(&t).unwrap();
        assert_eq!((d.n_rows(), d.n_features()), (3, 12));
        for i in 0..n {
            for r in 0..h {
                for col in 0..w {
                    for ch in 0..c {
                        assert_eq!(d.row(i)[(r * 2 + col) * 3 + ch], t.get(i, r, col, ch));
                    }
                }
            }
        }
    }

    #[test]
    fn flatten_rejects_non_finite() {
        let t = ImageTensor::new(2, 1, 2, 1, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap();
        assert_eq!(
            flatten_images(&t),
            Err(EncodeError::NonFinite { row: 1, col: 0 })
        );
    }

    #[test]
    fn zero_row_encodes_to_zero() {
        let k = key(10, 4, 1, 1);
        let d = DataMatrix::from_rows(&[vec![0.0; 10], vec![1.0; 10]]).unwrap();
        let e = encode(&d, &k, "p").unwrap();
        assert!(e.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(e.width(), 10 + 3);
    }

    #[test]
    fn norm_is_preserved_for_small_key() {
        let k = key(4, 2, 1, 3);
        let d = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let e = encode(&d, &k, "p").unwrap();
        let norm2 = dot_re(e.row(0), e.row(0));
        assert!((norm2 - 30.0).abs() < 1e-10);
    }

    #[test]
    fn blockwise_matches_dense_formula() {
        let k = key(37, 8, 2, 4);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..37).map(|j| ((i * 37 + j) as f64).sin()).collect())
            .collect();
        let d = DataMatrix::from_rows(&rows).unwrap();
        let e = encode(&d, &k, "p").unwrap();
        for (i, row) in rows.iter().enumerate() {
            let r = reference_encode(row, &k);
            for (j, z) in r.iter().enumerate() {
                assert!((e.get(i, j) - z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_products_are_recovered() {
        let k = key(50, 8, 1, 5);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..50)
                    .map(|j| ((i * 7 + j * 3) as f64).cos() * 3.0)
                    .collect()
            })
            .collect();
        let d = DataMatrix::from_rows(&rows).unwrap();
        let e = encode(&d, &k, "p").unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let plain = dot_re(&rows[a], &rows[b]);
                let (ra, rb) = (e.row(a), e.row(b));
                let re: f64 = dot_re(ra, rb);
                let im: f64 = (0..50 + 7)
                    .map(|j| ra[2 * j + 1] * rb[2 * j] - ra[2 * j] * rb[2 * j + 1])
                    .sum();
                assert!((re - plain).abs() <= 1e-8 * (1.0 + plain.abs()));
                assert!(im.abs() <= 1e-8 * (1.0 + plain.abs()));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let k = key(10, 4, 1, 1);
        let d = DataMatrix::from_rows(&[vec![0.0; 9], vec![0.0; 9]]).unwrap();
        assert_eq!(
            encode(&d, &k, "p").unwrap_err(),
            EncodeError::DimensionMismatch {
                expected: 10,
                got: 9
            }
        );
    }

    #[test]
    fn encode_into_reuses_the_buffer() {
        let k = key(30, 8, 2, 4);
        let big = DataMatrix::from_rows(
            &(0..9)
                .map(|i| (0..30).map(|j| (i * j) as f64 - 7.0).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let small = big.select_rows(&[2, 5]);
        let mut out = EncodedMatrix::empty("p", 0);
        encode_into(&big, &k, &mut out).unwrap();
        assert_eq!(out, encode(&big, &k, "p").unwrap());
        encode_into(&small, &k, &mut out).unwrap();
        assert_eq!(out, encode(&small, &k, "p").unwrap());
        assert_eq!(out.owner(), "p");
    }

    #[test]
    fn incremental_append_equals_encoding_concatenation() {
        let k = key(70, 16, 1, 6);
        let rows: Vec<Vec<f64>> = (0..75)
            .map(|i| {
                (0..70)
                    .map(|j| ((i * 70 + j) as f64 * 0.01).tan())
                    .collect()
            })
            .collect();
        let all = DataMatrix::from_rows(&rows).unwrap();
        let head = DataMatrix::from_rows(&rows[..41]).unwrap();
        let tail = DataMatrix::from_rows(&rows[41..]).unwrap();
        let mut e = encode(&head, &k, "p").unwrap();
        e.extend(&encode_incremental(&tail, &k, "p").unwrap());
        let whole = encode(&all, &k, "p").unwrap();
        assert_eq!(e.as_interleaved(), whole.as_interleaved());
    }

    #[test]
    fn empty_and_single_row_appends() {
        let k = key(12, 5, 1, 7);
        let empty = DataMatrix::new(Matrix::zeros(0, 12)).unwrap();
        let e = encode_incremental(&empty, &k, "p").unwrap();
        assert_eq!((e.n_rows(), e.width()), (0, 12 + 3));
        let one = DataMatrix::from_rows(&[vec![1.0; 12]]).unwrap();
        assert_eq!(encode_incremental(&one, &k, "p").unwrap().n_rows(), 1);
    }

    #[test]
    fn different_seeds_give_different_encodings() {
        let d = DataMatrix::from_rows(&[vec![1.0; 20], vec![2.0; 20]]).unwrap();
        let a = encode(&d, &key(20, 8, 1, 1), "p").unwrap();
        let b = encode(&d, &key(20, 8, 1, 2), "p").unwrap();
        let diff = a
            .as_interleaved()
            .iter()
            .zip(b.as_interleaved())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff > 1e-3);
    }

    #[test]
    fn encoded_matrix_validation() {
        assert!(EncodedMatrix::from_interleaved("x", 1, 2, vec![0.0; 3]).is_err());
        assert_eq!(
            EncodedMatrix::from_interleaved(
                "x",
                2,
                2,
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, f64::INFINITY, 0.0]
            )
            .unwrap_err(),
            EncodeError::NonFinite { row: 1, col: 1 }
        );
    }
}
