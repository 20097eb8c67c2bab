//! Small dense linear-algebra helpers: a row-major real matrix and the
//! complex Householder QR used to orthonormalize random frames.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows `rows` and columns `cols` of `self`, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest deviation from symmetry, `max |A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Returned when a column collapses to (numerically) zero during
/// orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDeficient {
    pub column: usize,
}

const RANK_TOL: f64 = 1e-10;

fn phase(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        z / r
    }
}

/// Thin Householder QR of a column-major `rows x cols` complex matrix
/// (`rows >= cols`), returning only the orthonormal factor.
///
/// The phases are fixed so that every diagonal entry of the triangular
/// factor is real and positive; with that convention the factorization is
/// unique, which makes independently computed factors bitwise comparable.
pub fn householder_orthonormalize(
    rows: usize,
    cols: usize,
    mut a: Vec<Complex64>,
) -> Result<Vec<Complex64>, RankDeficient> {
    assert!(cols <= rows, "need at least as many rows as columns");
    assert_eq!(a.len(), rows * cols);

    let col_norms: Vec<f64> = (0..cols)
        .map(|j| {
            a[j * rows..(j + 1) * rows]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    let mut reflectors: Vec<(Vec<Complex64>, f64)> = Vec::with_capacity(cols);
    let mut diag = Vec::with_capacity(cols);

    for j in 0..cols {
        let x = &a[j * rows + j..(j + 1) * rows];
        let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > RANK_TOL * col_norms[j]) || norm == 0.0 {
            return Err(RankDeficient { column: j });
        }
        let alpha = -phase(x[0]) * norm;
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();

        // Apply H = I - 2 v v† / (v† v) to the trailing columns.
        for c in j..cols {
            let col = &mut a[c * rows + j..(c + 1) * rows];
            let s: Complex64 = v
                .iter()
                .zip(col.iter())
                .map(|(vi, ci)| vi.conj() * ci)
                .sum();
            let scale = s * (2.0 / vnorm2);
            for (ci, vi) in col.iter_mut().zip(&v) {
                *ci -= scale * vi;
            }
        }
        diag.push(a[j * rows + j]);
        reflectors.push((v, vnorm2));
    }

    // Q = H_0 H_1 ... H_{cols-1} applied to the first `cols` unit vectors.
    let mut q = vec![Complex64::new(0.0, 0.0); rows * cols];
    for j in 0..cols {
        q[j * rows + j] = Complex64::new(1.0, 0.0);
    }
    for (j, (v, vnorm2)) in reflectors.iter().enumerate().rev() {
        for c in 0..cols {
            let col = &mut q[c * rows + j..(c + 1) * rows];
            let s: Complex64 = v
                .iter()
                .zip(col.iter())
                .map(|(vi, ci)| vi.conj() * ci)
                .sum();
            if s == Complex64::new(0.0, 0.0) {
                continue;
            }
            let scale = s * (2.0 / vnorm2);
            for (ci, vi) in col.iter_mut().zip(v) {
                *ci -= scale * vi;
            }
        }
    }

    for (j, r) in diag.iter().enumerate() {
        let ph = phase(*r);
        for z in &mut q[j * rows..(j + 1) * rows] {
            *z *= ph;
        }
    }
    Ok(q)
}
