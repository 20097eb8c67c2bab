use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{require_square, MlError};
use crate::linalg::Matrix;

/// Eigenvalues at or below this fraction of the largest are discarded.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Training-Gram statistics needed to center out-of-sample rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub col_means: Vec<f64>,
    pub total_mean: f64,
}

impl Centering {
    /// Centers a `t x N` block of kernel values against the training set.
    pub fn apply(&self, k: &Matrix) -> Result<Matrix, MlError> {
        let n = self.col_means.len();
        if k.cols() != n {
            return Err(MlError::DimensionMismatch {
                expected: n,
                got: k.cols(),
            });
        }
        let mut out = k.clone();
        for i in 0..k.rows() {
            let row_mean = k.row(i).iter().sum::<f64>() / n as f64;
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v - row_mean - self.col_means[j] + self.total_mean;
            }
        }
        Ok(out)
    }
}

/// Double-centers a training Gram: `K - 1·rowmeans - colmeans·1 + mean`.
pub fn center_gram(k: &Matrix) -> Result<(Matrix, Centering), MlError> {
    let n = require_square(k)?;
    if n == 0 {
        return Ok((
            k.clone(),
            Centering {
                col_means: Vec::new(),
                total_mean: 0.0,
            },
        ));
    }
    let mut col_means = vec![0.0; n];
    for i in 0..n {
        for (m, v) in col_means.iter_mut().zip(k.row(i)) {
            *m += v;
        }
    }
    for m in &mut col_means {
        *m /= n as f64;
    }
    let total_mean = col_means.iter().sum::<f64>() / n as f64;
    let stats = Centering {
        col_means,
        total_mean,
    };
    let centered = stats.apply(k)?;
    Ok((centered, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    /// Retained eigenvalues of the centered Gram, descending.
    pub eigenvalues: Vec<f64>,
    /// `N x m`; column `i` is the unit eigenvector divided by `sqrt(λ_i)`.
    pub components: Matrix,
    pub centering: Centering,
    /// Number of components asked for; larger than `eigenvalues.len()` when
    /// the Gram did not have enough usable eigenvalues.
    pub requested: usize,
}

impl KpcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Some(usable)` when fewer components than requested were kept.
    pub fn rank_deficient(&self) -> Option<usize> {
        (self.eigenvalues.len() < self.requested).then_some(self.eigenvalues.len())
    }
}

/// Fits kernel PCA on a training Gram, keeping up to `m` components.
///
/// Eigenvectors are signed so their largest-magnitude entry is positive.
/// Fails only if no eigenvalue is usable; a shortfall is reported through
/// [`KpcaModel::rank_deficient`].
pub fn kpca_fit(k: &Matrix, m: usize) -> Result<KpcaModel, MlError> {
    let n = require_square(k)?;
    if m == 0 || m > n {
        return Err(MlError::InvalidArgument(format!(
            "components must be in 1..={n}, got {m}"
        )));
    }
    let (kc, centering) = center_gram(k)?;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, kc.as_slice()));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > EIGEN_FLOOR * lmax && lmax > 0.0)
        .take(m)
        .collect();
    if kept.is_empty() {
        return Err(MlError::RankDeficient { usable: 0 });
    }

    let mut components = Matrix::zeros(n, kept.len());
    let mut eigenvalues = Vec::with_capacity(kept.len());
    for (c, &idx) in kept.iter().enumerate() {
        let lambda = eig.eigenvalues[idx];
        let v = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / lambda.sqrt();
        for r in 0..n {
            components[(r, c)] = v[r] * scale;
        }
        eigenvalues.push(lambda);
    }
    Ok(KpcaModel {
        eigenvalues,
        components,
        centering,
        requested: m,
    })
}

/// Projects `t x N` kernel rows (test vs train) onto the fitted components.
pub fn kpca_transform(model: &KpcaModel, k_test_train: &Matrix) -> Result<Matrix, MlError> {
    let centered = model.centering.apply(k_test_train)?;
    Ok(centered.matmul(&model.components))
}
