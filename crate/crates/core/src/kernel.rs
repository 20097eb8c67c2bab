//! Server-side reconstruction of exact kernel values from encoded rows.
//!
//! For rows encoded under the same key, `Re(a' · conj(b'))` equals the
//! plaintext dot product `a · b` because `Γ†Γ = I`. Everything else
//! (squared distances, the four kernel families, the global Gram matrix and
//! its incremental updates) is built on top of those recovered products.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{DataMatrix, EncodedMatrix};
use crate::linalg::Matrix;

/// Imaginary residue above this fraction of `1 + max|Re|` means the two
/// submissions were not encoded under the same key.
pub const IMAG_LEAK_TOL: f64 = 1e-6;

const ROW_TILE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("encoded width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("imaginary residue {max_imag:e} too large for real magnitude {max_real:e}; submissions were not encoded under the same key")]
    ImaginaryLeak { max_imag: f64, max_real: f64 },
    #[error("kernel value overflowed to a non-finite number")]
    Overflow,
    #[error("duplicate owner {0:?}")]
    DuplicateOwner(String),
    #[error("unknown owner {0:?}")]
    UnknownOwner(String),
    #[error("no cached rows for owner {0:?}")]
    MissingCache(String),
    #[error("at least one submission is required")]
    NoSubmissions,
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
}

/// Kernel family and hyperparameters.
///
/// The Gaussian kernel is `γ² exp(-‖x-y‖² / (2l²))`; the single-rate form
/// `exp(-g ‖x-y‖²)` is the special case `γ = 1`, `l = 1/sqrt(2g)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", try_from = "KernelDoc")]
pub enum KernelSpec {
    Linear,
    Rbf {
        gamma: f64,
        length_scale: f64,
    },
    Polynomial {
        degree: u32,
    },
    RationalQuadratic {
        gamma: f64,
        length_scale: f64,
        alpha: f64,
    },
}

/// Flat document form; rejects fields the chosen family does not take.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    family: String,
    gamma: Option<f64>,
    length_scale: Option<f64>,
    degree: Option<u32>,
    alpha: Option<f64>,
}

impl TryFrom<KernelDoc> for KernelSpec {
    type Error = String;

    fn try_from(d: KernelDoc) -> Result<Self, String> {
        let fam = d.family.as_str();
        let given = [
            ("gamma", d.gamma.is_some()),
            ("length_scale", d.length_scale.is_some()),
            ("degree", d.degree.is_some()),
            ("alpha", d.alpha.is_some()),
        ];
        let allowed: &[&str] = match fam {
            "linear" => &[],
            "rbf" => &["gamma", "length_scale"],
            "polynomial" => &["degree"],
            "rational_quadratic" => &["gamma", "length_scale", "alpha"],
            _ => return Err(format!("unknown kernel family {fam:?}")),
        };
        if let Some((k, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            return Err(format!("{fam} kernel does not take {k}"));
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| format!("{fam} kernel needs {k}"));
        Ok(match fam {
            "linear" => KernelSpec::Linear,
            "rbf" => KernelSpec::Rbf {
                gamma: need(d.gamma, "gamma")?,
                length_scale: need(d.length_scale, "length_scale")?,
            },
            "polynomial" => KernelSpec::Polynomial {
                degree: d.degree.ok_or("polynomial kernel needs degree")?,
            },
            _ => KernelSpec::RationalQuadratic {
                gamma: need(d.gamma, "gamma")?,
                length_scale: need(d.length_scale, "length_scale")?,
                alpha: need(d.alpha, "alpha")?,
            },
        })
    }
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::RationalQuadratic { .. } => "rational_quadratic",
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: &str| Err(KernelError::InvalidSpec(m.to_string()));
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf {
                gamma,
                length_scale,
            } => {
                if !gamma.is_finite() {
                    return bad("gamma must be finite");
                }
                if !(length_scale > 0.0 && length_scale.is_finite()) {
                    return bad("length_scale must be positive");
                }
                Ok(())
            }
            KernelSpec::Polynomial { degree } => {
                if degree == 0 {
                    return bad("degree must be at least 1");
                }
                Ok(())
            }
            KernelSpec::RationalQuadratic {
                gamma,
                length_scale,
                alpha,
            } => {
                if !gamma.is_finite() {
                    return bad("gamma must be finite");
                }
                if !(length_scale > 0.0 && length_scale.is_finite()) {
                    return bad("length_scale must be positive");
                }
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return bad("alpha must be positive");
                }
                Ok(())
            }
        }
    }

    /// Kernel value from a dot product and a squared distance.
    #[inline]
    pub fn value(&self, dot: f64, sq_dist: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Rbf {
                gamma,
                length_scale,
            } => gamma * gamma * (-sq_dist / (2.0 * length_scale * length_scale)).exp(),
            KernelSpec::Polynomial { degree } => (1.0 + dot).powi(degree as i32),
            KernelSpec::RationalQuadratic {
                gamma,
                length_scale,
                alpha,
            } => {
                gamma
                    * gamma
                    * (1.0 + sq_dist / (2.0 * alpha * length_scale * length_scale)).powf(-alpha)
            }
        }
    }

    fn needs_distance(&self) -> bool {
        matches!(
            self,
            KernelSpec::Rbf { .. } | KernelSpec::RationalQuadratic { .. }
        )
    }
}

/// Recovered plaintext products between two encoded matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseProducts {
    /// `n_p x n_q` matrix of `Re(p_i · conj(q_j))`.
    pub cross: Matrix,
    pub self_p: Vec<f64>,
    pub self_q: Vec<f64>,
    /// Largest `|Im(p_i · conj(q_j))|`, kept for diagnostics.
    pub max_imag: f64,
}

/// Hermitian product of two interleaved rows, `(Re, Im)` of `a · conj(b)`.
///
/// The real part is symmetric in its arguments bit for bit.
#[inline]
pub fn hermitian_dot(a: &[f64], b: &[f64]) -> (f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for t in 0..4 {
            re[t] += x[2 * t] * y[2 * t] + x[2 * t + 1] * y[2 * t + 1];
            im[t] += x[2 * t + 1] * y[2 * t] - x[2 * t] * y[2 * t + 1];
        }
    }
    let mut r = (re[0] + re[1]) + (re[2] + re[3]);
    let mut i = (im[0] + im[1]) + (im[2] + im[3]);
    for (x, y) in ta.chunks_exact(2).zip(tb.chunks_exact(2)) {
        r += x[0] * y[0] + x[1] * y[1];
        i += x[1] * y[0] - x[0] * y[1];
    }
    (r, i)
}

fn self_norms(m: &EncodedMatrix) -> Vec<f64> {
    (0..m.n_rows())
        .into_par_iter()
        .map(|i| hermitian_dot(m.row(i), m.row(i)).0)
        .collect()
}

/// Recovers `P Qᵀ` and the per-row squared norms from two encoded matrices.
pub fn cross_products(ap: &EncodedMatrix, bq: &EncodedMatrix) -> Result<BaseProducts, KernelError> {
    if ap.width() != bq.width() {
        return Err(KernelError::WidthMismatch {
            expected: ap.width(),
            got: bq.width(),
        });
    }
    let (np, nq) = (ap.n_rows(), bq.n_rows());
    let mut cross = vec![0.0f64; np * nq];
    let max_imag = if nq == 0 {
        0.0
    } else {
        cross
            .par_chunks_mut(ROW_TILE * nq)
            .enumerate()
            .map(|(tile, out)| {
                let first = tile * ROW_TILE;
                let rows = out.len() / nq;
                let mut worst = 0.0f64;
                for j in 0..nq {
                    let b = bq.row(j);
                    for r in 0..rows {
                        let (re, im) = hermitian_dot(ap.row(first + r), b);
                        out[r * nq + j] = re;
                        worst = worst.max(im.abs());
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    };
    let cross = Matrix::from_vec(np, nq, cross);
    let max_real = cross.max_abs();
    if !(max_imag <= IMAG_LEAK_TOL * (1.0 + max_real)) {
        return Err(KernelError::ImaginaryLeak { max_imag, max_real });
    }
    Ok(BaseProducts {
        cross,
        self_p: self_norms(ap),
        self_q: self_norms(bq),
        max_imag,
    })
}

/// `D[i][j] = ‖p_i‖² + ‖q_j‖² - 2 p_i·q_j`, clamped below at zero.
pub fn squared_distances(base: &BaseProducts) -> Matrix {
    let (np, nq) = (base.cross.rows(), base.cross.cols());
    Matrix::from_fn(np, nq, |i, j| {
        let d = base.self_p[i] + base.self_q[j] - 2.0 * base.cross[(i, j)];
        d.max(0.0)
    })
}

/// Evaluates `spec` entrywise on recovered products.
pub fn apply_kernel(spec: &KernelSpec, base: &BaseProducts) -> Result<Matrix, KernelError> {
    spec.validate()?;
    let (np, nq) = (base.cross.rows(), base.cross.cols());
    let out = if spec.needs_distance() {
        let d = squared_distances(base);
        Matrix::from_fn(np, nq, |i, j| spec.value(base.cross[(i, j)], d[(i, j)]))
    } else {
        Matrix::from_fn(np, nq, |i, j| spec.value(base.cross[(i, j)], 0.0))
    };
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(KernelError::Overflow);
    }
    Ok(out)
}

/// Which party a global Gram row belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOwner {
    pub owner: String,
    pub local: usize,
}

/// Kernel matrix over every party's rows, in submission order.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalGram {
    values: Matrix,
    index_map: Vec<RowOwner>,
    spec: KernelSpec,
    width: usize,
    max_imag: f64,
}

/// Work done by an incremental update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateStats {
    /// Number of kernel entries evaluated.
    pub entries_computed: usize,
}

fn kernel_block(
    spec: &KernelSpec,
    a: &EncodedMatrix,
    b: &EncodedMatrix,
) -> Result<(Matrix, f64), KernelError> {
    let base = cross_products(a, b)?;
    let k = apply_kernel(spec, &base)?;
    Ok((k, base.max_imag))
}

/// Computes the global Gram matrix over all submissions.
///
/// Each unordered pair of submissions is evaluated once; off-diagonal blocks
/// are mirrored so the result is exactly symmetric.
pub fn assemble_global(
    submissions: &[EncodedMatrix],
    spec: &KernelSpec,
) -> Result<GlobalGram, KernelError> {
    spec.validate()?;
    let first = submissions.first().ok_or(KernelError::NoSubmissions)?;
    let width = first.width();
    for (i, s) in submissions.iter().enumerate() {
        if s.width() != width {
            return Err(KernelError::WidthMismatch {
                expected: width,
                got: s.width(),
            });
        }
        if submissions[..i].iter().any(|t| t.owner() == s.owner()) {
            return Err(KernelError::DuplicateOwner(s.owner().to_string()));
        }
    }

    let mut offsets = Vec::with_capacity(submissions.len());
    let mut total = 0;
    for s in submissions {
        offsets.push(total);
        total += s.n_rows();
    }

    let mut values = Matrix::zeros(total, total);
    let mut max_imag = 0.0f64;
    for p in 0..submissions.len() {
        for q in p..submissions.len() {
            let (block, imag) = kernel_block(spec, &submissions[p], &submissions[q])?;
            max_imag = max_imag.max(imag);
            let (op, oq) = (offsets[p], offsets[q]);
            for i in 0..block.rows() {
                for j in 0..block.cols() {
                    let v = block[(i, j)];
                    values[(op + i, oq + j)] = v;
                    if p != q {
                        values[(oq + j, op + i)] = v;
                    }
                }
            }
        }
    }

    let index_map = submissions
        .iter()
        .flat_map(|s| {
            (0..s.n_rows()).map(move |local| RowOwner {
                owner: s.owner().to_string(),
                local,
            })
        })
        .collect();
    Ok(GlobalGram {
        values,
        index_map,
        spec: *spec,
        width,
        max_imag,
    })
}

impl GlobalGram {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn index_map(&self) -> &[RowOwner] {
        &self.index_map
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    /// Encoded width every contributing submission had.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Largest imaginary residue seen while recovering products.
    pub fn max_imag_residue(&self) -> f64 {
        self.max_imag
    }

    pub fn owners(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.index_map {
            if !out.contains(&r.owner.as_str()) {
                out.push(&r.owner);
            }
        }
        out
    }

    /// Global row positions owned by `owner`.
    pub fn rows_of(&self, owner: &str) -> Vec<usize> {
        self.index_map
            .iter()
            .enumerate()
            .filter(|(_, r)| r.owner == owner)
            .map(|(i, _)| i)
            .collect()
    }

    /// Appends `new` rows, evaluating only the new-vs-existing and
    /// new-vs-new entries. Existing entries are left untouched.
    ///
    /// `cached` must hold the encoded rows of every owner currently in the
    /// Gram (local row `r` of an owner is row `r` of its cached matrix).
    pub fn append_rows(
        &mut self,
        cached: &[EncodedMatrix],
        new: &EncodedMatrix,
    ) -> Result<UpdateStats, KernelError> {
        if new.width() != self.width {
            return Err(KernelError::WidthMismatch {
                expected: self.width,
                got: new.width(),
            });
        }
        let n_new = new.n_rows();
        if n_new == 0 {
            return Ok(UpdateStats {
                entries_computed: 0,
            });
        }

        let mut order = Vec::with_capacity(self.index_map.len());
        for r in &self.index_map {
            let src = cached
                .iter()
                .find(|c| c.owner() == r.owner)
                .filter(|c| c.n_rows() > r.local)
                .ok_or_else(|| KernelError::MissingCache(r.owner.clone()))?;
            if src.width() != self.width {
                return Err(KernelError::WidthMismatch {
                    expected: self.width,
                    got: src.width(),
                });
            }
            order.push((src, r.local));
        }
        let mut existing = EncodedMatrix::empty("", self.width);
        for (src, local) in &order {
            existing.extend(&src.select_rows(&[*local]));
        }

        let (old_new, imag_a) = kernel_block(&self.spec, &existing, new)?;
        let (new_new, imag_b) = kernel_block(&self.spec, new, new)?;

        let n_old = self.index_map.len();
        let n = n_old + n_new;
        let mut values = Matrix::zeros(n, n);
        for i in 0..n_old {
            values.row_mut(i)[..n_old].copy_from_slice(self.values.row(i));
            for j in 0..n_new {
                values[(i, n_old + j)] = old_new[(i, j)];
                values[(n_old + j, i)] = old_new[(i, j)];
            }
        }
        for i in 0..n_new {
            for j in 0..n_new {
                values[(n_old + i, n_old + j)] = new_new[(i, j)];
            }
        }

        let already = self
            .index_map
            .iter()
            .filter(|r| r.owner == new.owner())
            .count();
        self.index_map.extend((0..n_new).map(|i| RowOwner {
            owner: new.owner().to_string(),
            local: already + i,
        }));
        self.values = values;
        self.max_imag = self.max_imag.max(imag_a).max(imag_b);
        Ok(UpdateStats {
            entries_computed: old_new.rows() * old_new.cols() + new_new.rows() * new_new.cols(),
        })
    }

    /// Drops every row and column owned by `owner`; returns how many rows
    /// were removed.
    pub fn remove_owner(&mut self, owner: &str) -> Result<usize, KernelError> {
        let keep: Vec<usize> = (0..self.index_map.len())
            .filter(|&i| self.index_map[i].owner != owner)
            .collect();
        let removed = self.index_map.len() - keep.len();
        if removed == 0 {
            return Err(KernelError::UnknownOwner(owner.to_string()));
        }
        self.values = self.values.select(&keep, &keep);
        self.index_map = keep.iter().map(|&i| self.index_map[i].clone()).collect();
        Ok(removed)
    }
}

/// Centralized reference: the kernel matrix of vertically stacked plaintext,
/// computed directly from features (squared distances as `Σ (x - y)²`).
pub fn plaintext_gram(parts: &[&DataMatrix], spec: &KernelSpec) -> Result<Matrix, KernelError> {
    spec.validate()?;
    let rows: Vec<&[f64]> = parts
        .iter()
        .flat_map(|p| (0..p.n_rows()).map(move |i| p.row(i)))
        .collect();
    let n = rows.len();
    let mut out = Matrix::zeros(n, n);
    out.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                let (x, y) = (rows[i], rows[j]);
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                *v = spec.value(dot, dist);
            }
        });
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(KernelError::Overflow);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;
    use crate::keys::{build_key, derive_plan, EncodingKey, Seed};

    fn key(f: usize, s: u8) -> EncodingKey {
        build_key(&Seed::new([s; 32]), &derive_plan(f, 4, 1).unwrap()).unwrap()
    }

    fn enc(rows: &[Vec<f64>], k: &EncodingKey, owner: &str) -> EncodedMatrix {
        encode(&DataMatrix::from_rows(rows).unwrap(), k, owner).unwrap()
    }

    #[test]
    fn self_product_of_single_row() {
        let k = key(2, 1);
        let a = enc(&[vec![3.0, 4.0]], &k, "a");
        let b = cross_products(&a, &a).unwrap();
        assert!((b.cross[(0, 0)] - 25.0).abs() < 1e-12);
        assert!((b.self_p[0] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn two_party_cross_product() {
        let k = key(2, 2);
        let a = enc(&[vec![1.0, 2.0]], &k, "a");
        let b = enc(&[vec![3.0, 4.0]], &k, "b");
        let base = cross_products(&a, &b).unwrap();
        assert!((base.cross[(0, 0)] - 11.0).abs() < 1e-12);
        let d = squared_distances(&base);
        assert!((d[(0, 0)] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_keys_are_detected() {
        let a = enc(
            &[vec![1.0, 2.0, 0.5, -1.0], vec![0.0, 1.0, 1.0, 1.0]],
            &key(4, 1),
            "a",
        );
        let b = enc(
            &[vec![3.0, 4.0, 1.0, 2.0], vec![1.0, 1.0, 1.0, 1.0]],
            &key(4, 2),
            "b",
        );
        match cross_products(&a, &b) {
            Err(KernelError::ImaginaryLeak { .. }) => {}
            Ok(base) => assert!((base.cross[(0, 0)] - 7.5).abs() > 1e-6),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn width_mismatch() {
        let a = enc(&[vec![1.0, 2.0]], &key(2, 1), "a");
        let b = enc(&[vec![1.0, 2.0, 3.0]], &key(3, 1), "b");
        assert!(matches!(
            cross_products(&a, &b),
            Err(KernelError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn identical_points_have_zero_distance_and_clamp() {
        let base = BaseProducts {
            cross: Matrix::from_vec(1, 2, vec![2.0, 1.0 + 5e-15]),
            self_p: vec![2.0],
            self_q: vec![2.0, 2.0 - 1e-14],
            max_imag: 0.0,
        };
        let d = squared_distances(&base);
        assert_eq!(d[(0, 0)], 0.0);
        assert!(d[(0, 1)] >= 0.0);
        let neg = BaseProducts {
            cross: Matrix::from_vec(1, 1, vec![1.0]),
            self_p: vec![1.0],
            self_q: vec![1.0 - 1e-14],
            max_imag: 0.0,
        };
        assert_eq!(squared_distances(&neg)[(0, 0)], 0.0);
    }

    #[test]
    fn kernel_values_by_hand() {
        let base = |c: f64, sp: f64, sq: f64| BaseProducts {
            cross: Matrix::from_vec(1, 1, vec![c]),
            self_p: vec![sp],
            self_q: vec![sq],
            max_imag: 0.0,
        };
        let rbf = KernelSpec::Rbf {
            gamma: 1.0,
            length_scale: 1.0,
        };
        assert_eq!(
            apply_kernel(&rbf, &base(5.0, 5.0, 5.0)).unwrap()[(0, 0)],
            1.0
        );
        let poly = KernelSpec::Polynomial { degree: 2 };
        assert_eq!(
            apply_kernel(&poly, &base(11.0, 5.0, 25.0)).unwrap()[(0, 0)],
            144.0
        );
        let rq = KernelSpec::RationalQuadratic {
            gamma: 1.0,
            length_scale: 1.0,
            alpha: 1.0,
        };
        let v = apply_kernel(&rq, &base(11.0, 5.0, 25.0)).unwrap()[(0, 0)];
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn polynomial_overflow() {
        let base = BaseProducts {
            cross: Matrix::from_vec(1, 1, vec![1e200]),
            self_p: vec![1e200],
            self_q: vec![1e200],
            max_imag: 0.0,
        };
        assert_eq!(
            apply_kernel(&KernelSpec::Polynomial { degree: 3 }, &base),
            Err(KernelError::Overflow)
        );
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::Rbf {
            gamma: 1.0,
            length_scale: 0.0
        }
        .validate()
        .is_err());
        assert!(KernelSpec::Polynomial { degree: 0 }.validate().is_err());
        assert!(KernelSpec::RationalQuadratic {
            gamma: 1.0,
            length_scale: 1.0,
            alpha: -1.0
        }
        .validate()
        .is_err());
        let js = serde_json::to_string(&KernelSpec::Rbf {
            gamma: 2.0,
            length_scale: 3.0,
        })
        .unwrap();
        assert_eq!(js, r#"{"family":"rbf","gamma":2.0,"length_scale":3.0}"#);
        assert_eq!(
            serde_json::from_str::<KernelSpec>(&js).unwrap(),
            KernelSpec::Rbf {
                gamma: 2.0,
                length_scale: 3.0
            }
        );
    }

    #[test]
    fn spec_documents_reject_stray_fields() {
        let parse = serde_json::from_str::<KernelSpec>;
        assert_eq!(parse(r#"{"family":"linear"}"#).unwrap(), KernelSpec::Linear);
        assert_eq!(
            parse(r#"{"family":"polynomial","degree":3}"#).unwrap(),
            KernelSpec::Polynomial { degree: 3 }
        );
        for bad in [
            r#"{"family":"linear","gamma":1}"#,
            r#"{"family":"rbf","gamma":1}"#,
            r#"{"family":"polynomial","degree":2,"alpha":1}"#,
            r#"{"family":"sigmoid"}"#,
            r#"{"family":"rbf","gamma":1,"length_scale":1,"colour":1}"#,
        ] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn single_party_linear_gram() {
        let k = key(3, 4);
        let a = enc(&[vec![1.0, -2.0, 2.0]], &k, "a");
        let g = assemble_global(&[a], &KernelSpec::Linear).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.values()[(0, 0)] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rbf_diagonal_is_exact() {
        let k = key(6, 5);
        let spec = KernelSpec::Rbf {
            gamma: 1.7,
            length_scale: 2.0,
        };
        let subs: Vec<EncodedMatrix> = (0..3)
            .map(|p| {
                let rows: Vec<Vec<f64>> = (0..2)
                    .map(|i| {
                        (0..6)
                            .map(|j| ((p * 12 + i * 6 + j) as f64).sin())
                            .collect()
                    })
                    .collect();
                enc(&rows, &k, &format!("p{p}"))
            })
            .collect();
        let g = assemble_global(&subs, &spec).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.values().asymmetry(), 0.0);
        for i in 0..6 {
            assert_eq!(g.values()[(i, i)], 1.7 * 1.7);
        }
        assert_eq!(
            g.index_map()[3],
            RowOwner {
                owner: "p1".into(),
                local: 1
            }
        );
    }

    #[test]
    fn duplicate_owner_and_empty_input() {
        let k = key(2, 1);
        let a = enc(&[vec![1.0, 2.0]], &k, "a");
        assert_eq!(
            assemble_global(&[a.clone(), a], &KernelSpec::Linear),
            Err(KernelError::DuplicateOwner("a".into()))
        );
        assert_eq!(
            assemble_global(&[], &KernelSpec::Linear),
            Err(KernelError::NoSubmissions)
        );
    }

    #[test]
    fn remove_sole_owner_leaves_empty_gram() {
        let k = key(2, 1);
        let a = enc(&[vec![1.0, 2.0], vec![0.0, 1.0]], &k, "a");
        let mut g = assemble_global(&[a], &KernelSpec::Linear).unwrap();
        assert_eq!(g.remove_owner("a").unwrap(), 2);
        assert!(g.is_empty());
        assert_eq!(g.values().rows(), 0);
        assert_eq!(
            g.remove_owner("a"),
            Err(KernelError::UnknownOwner("a".into()))
        );
    }

    #[test]
    fn append_nothing_is_a_no_op() {
        let k = key(2, 1);
        let a = enc(&[vec![1.0, 2.0], vec![0.0, 1.0]], &k, "a");
        let mut g = assemble_global(std::slice::from_ref(&a), &KernelSpec::Linear).unwrap();
        let before = g.clone();
        let stats = g.append_rows(&[a], &EncodedMatrix::empty("b", 3)).unwrap();
        assert_eq!(stats.entries_computed, 0);
        assert_eq!(g, before);
    }

    #[test]
    fn append_requires_cache() {
        let k = key(2, 1);
        let a = enc(&[vec![1.0, 2.0], vec![0.0, 1.0]], &k, "a");
        let b = enc(&[vec![1.0, 1.0]], &k, "b");
        let mut g = assemble_global(&[a], &KernelSpec::Linear).unwrap();
        assert_eq!(
            g.append_rows(&[], &b),
            Err(KernelError::MissingCache("a".into()))
        );
    }

    #[test]
    fn hermitian_dot_real_part_is_symmetric() {
        let a: Vec<f64> = (0..38).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..38).map(|i| (i as f64 * 1.1).cos()).collect();
        let (r1, i1) = hermitian_dot(&a, &b);
        let (r2, i2) = hermitian_dot(&b, &a);
        assert_eq!(r1.to_bits(), r2.to_bits());
        assert!((i1 + i2).abs() < 1e-15);
    }
}
