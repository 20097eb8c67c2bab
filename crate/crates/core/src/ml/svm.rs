//! Simplified SMO on a precomputed kernel.
//!
//! Each pass visits every multiplier in index order; a multiplier violating
//! the KKT conditions by more than `tol` is paired with a second index drawn
//! from a seeded generator, and the pair is updated analytically. Training
//! stops after a full pass in which no multiplier moved by more than `tol`,
//! or after `max_passes` passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_square, MlError};
use crate::linalg::Matrix;

/// Pair updates moving `α_j` by less than this are skipped.
const MIN_STEP: f64 = 1e-5;

/// Multipliers within this fraction of `C` of a bound are put on it, so
/// rounding noise cannot decide whether a point is a support vector.
const BOUND_SNAP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 1000,
            seed: 0,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<(), MlError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(MlError::InvalidPenalty(self.c));
        }
        if !(self.tol > 0.0) {
            return Err(MlError::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_passes == 0 {
            return Err(MlError::InvalidArgument(
                "max_passes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One binary machine; the positive class has target `+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    /// `α_i y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    /// Training-row indices of the support vectors.
    pub support: Vec<usize>,
    pub bias: f64,
    pub converged: bool,
    pub passes: usize,
}

impl BinarySvm {
    pub fn decision(&self, k_row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.dual_coefs)
            .map(|(&s, &c)| c * k_row[s])
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    /// Sorted class labels.
    pub classes: Vec<i32>,
    /// One machine for two classes (`classes[1]` positive), otherwise one
    /// per class in one-vs-rest order.
    pub machines: Vec<BinarySvm>,
    pub n_train: usize,
}

fn decisions(machine_alpha_y: &[f64], k: &Matrix, i: usize, b: f64) -> f64 {
    k.row(i)
        .iter()
        .zip(machine_alpha_y)
        .map(|(kij, ay)| kij * ay)
        .sum::<f64>()
        + b
}

fn snap(a: f64, c: f64) -> f64 {
    if a <= BOUND_SNAP * c {
        0.0
    } else if a >= c - BOUND_SNAP * c {
        c
    } else {
        a
    }
}

/// Trains one binary SVM with targets `y ∈ {-1, +1}`.
pub fn train_binary(k: &Matrix, y: &[f64], params: &SvmParams) -> Result<BinarySvm, MlError> {
    params.validate()?;
    let n = require_square(k)?;
    if y.len() != n {
        return Err(MlError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|&t| t != 1.0 && t != -1.0) {
        return Err(MlError::InvalidArgument(
            "binary targets must be +1 or -1".into(),
        ));
    }
    if y.iter().all(|&t| t == y[0]) {
        return Err(MlError::SingleClass);
    }

    let c = params.c;
    let tol = params.tol;
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut alpha = vec![0.0f64; n];
    let mut ay = vec![0.0f64; n];
    let mut b = 0.0f64;
    let mut passes = 0;
    let mut converged = false;

    while passes < params.max_passes {
        passes += 1;
        let mut moved = false;
        for i in 0..n {
            let e_i = decisions(&ay, k, i, b) - y[i];
            let r_i = y[i] * e_i;
            if !((r_i < -tol && alpha[i] < c) || (r_i > tol && alpha[i] > 0.0)) {
                continue;
            }
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let e_j = decisions(&ay, k, j, b) - y[j];
            let (ai_old, aj_old) = (alpha[i], alpha[j]);
            let (lo, hi) = if y[i] != y[j] {
                ((aj_old - ai_old).max(0.0), (c + aj_old - ai_old).min(c))
            } else {
                ((ai_old + aj_old - c).max(0.0), (ai_old + aj_old).min(c))
            };
            if lo >= hi {
                continue;
            }
            let eta = 2.0 * k[(i, j)] - k[(i, i)] - k[(j, j)];
            if eta >= -1e-12 * (k[(i, i)].abs() + k[(j, j)].abs()) {
                continue;
            }
            let aj = snap((aj_old - y[j] * (e_i - e_j) / eta).clamp(lo, hi), c);
            if (aj - aj_old).abs() < MIN_STEP {
                continue;
            }
            let ai = snap((ai_old + y[i] * y[j] * (aj_old - aj)).clamp(0.0, c), c);

            let b1 = b - e_i - y[i] * (ai - ai_old) * k[(i, i)] - y[j] * (aj - aj_old) * k[(i, j)];
            let b2 = b - e_j - y[i] * (ai - ai_old) * k[(i, j)] - y[j] * (aj - aj_old) * k[(j, j)];
            b = if ai > 0.0 && ai < c {
                b1
            } else if aj > 0.0 && aj < c {
                b2
            } else {
                0.5 * (b1 + b2)
            };

            if (aj - aj_old).abs() > tol || (ai - ai_old).abs() > tol {
                moved = true;
            }
            alpha[i] = ai;
            alpha[j] = aj;
            ay[i] = ai * y[i];
            ay[j] = aj * y[j];
        }
        if !moved {
            converged = true;
            break;
        }
    }

    // Final bias: average of the margin conditions over free support vectors.
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0 && alpha[i] < c).collect();
    if !free.is_empty() {
        let total: f64 = free.iter().map(|&i| y[i] - decisions(&ay, k, i, 0.0)).sum();
        b = total / free.len() as f64;
    }

    let support: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let dual_coefs = support.iter().map(|&i| ay[i]).collect();
    Ok(BinarySvm {
        dual_coefs,
        support,
        bias: b,
        converged,
        passes,
    })
}

/// Trains on a square training Gram. More than two classes uses
/// one-vs-rest; the binary problems train concurrently.
pub fn svm_train(k: &Matrix, labels: &[i32], params: &SvmParams) -> Result<SvmModel, MlError> {
    params.validate()?;
    let n = require_square(k)?;
    if labels.len() != n {
        return Err(MlError::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(MlError::SingleClass);
    }
    let positives: Vec<i32> = if classes.len() == 2 {
        vec![classes[1]]
    } else {
        classes.clone()
    };
    let machines = positives
        .par_iter()
        .enumerate()
        .map(|(m, &pos)| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == pos { 1.0 } else { -1.0 })
                .collect();
            let p = SvmParams {
                seed: params.seed.wrapping_add(m as u64),
                ..*params
            };
            train_binary(k, &y, &p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SvmModel {
        c: params.c,
        classes,
        machines,
        n_train: n,
    })
}

impl SvmModel {
    /// True when every binary machine met the stopping criterion.
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    /// `t x machines` decision values for `t x N` test-vs-train kernel rows.
    pub fn decision_values(&self, k_test_train: &Matrix) -> Result<Matrix, MlError> {
        if k_test_train.cols() != self.n_train {
            return Err(MlError::DimensionMismatch {
                expected: self.n_train,
                got: k_test_train.cols(),
            });
        }
        Ok(Matrix::from_fn(
            k_test_train.rows(),
            self.machines.len(),
            |i, m| self.machines[m].decision(k_test_train.row(i)),
        ))
    }

    /// Per-class scores: for two classes, column 1 is the decision value and
    /// column 0 its negation.
    pub fn class_scores(&self, k_test_train: &Matrix) -> Result<Matrix, MlError> {
        let d = self.decision_values(k_test_train)?;
        if self.classes.len() == 2 {
            Ok(Matrix::from_fn(d.rows(), 2, |i, c| {
                if c == 1 {
                    d[(i, 0)]
                } else {
                    -d[(i, 0)]
                }
            }))
        } else {
            Ok(d)
        }
    }

    /// Predicted labels; ties go to the lowest class.
    pub fn predict(&self, k_test_train: &Matrix) -> Result<Vec<i32>, MlError> {
        let d = self.decision_values(k_test_train)?;
        Ok((0..d.rows())
            .map(|i| {
                if self.classes.len() == 2 {
                    return if d[(i, 0)] > 0.0 {
                        self.classes[1]
                    } else {
                        self.classes[0]
                    };
                }
                let mut best = 0;
                for m in 1..d.cols() {
                    if d[(i, m)] > d[(i, best)] {
                        best = m;
                    }
                }
                self.classes[best]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_gram(x: &[[f64; 2]]) -> Matrix {
        Matrix::from_fn(x.len(), x.len(), |i, j| {
            x[i][0] * x[j][0] + x[i][1] * x[j][1]
        })
    }

    #[test]
    fn two_point_problem() {
        let m = train_binary(&Matrix::identity(2), &[1.0, -1.0], &SvmParams::default()).unwrap();
        assert_eq!(m.support, vec![0, 1]);
        assert!((m.dual_coefs[0] + m.dual_coefs[1]).abs() < 1e-12);
        assert!(m.dual_coefs[0] > 0.0);
        assert!(m.decision(&[1.0, 0.0]) > 0.0);
        assert!(m.decision(&[0.0, 1.0]) < 0.0);
        assert!(m.converged);
    }

    #[test]
    fn invalid_penalty_and_single_class() {
        let k = Matrix::identity(2);
        let p = SvmParams {
            c: 0.0,
            ..SvmParams::default()
        };
        assert_eq!(
            svm_train(&k, &[0, 1], &p),
            Err(MlError::InvalidPenalty(0.0))
        );
        assert_eq!(
            svm_train(&k, &[1, 1], &SvmParams::default()),
            Err(MlError::SingleClass)
        );
    }

    #[test]
    fn separable_recall_and_box_constraints() {
        let x = [
            [2.0, 2.0],
            [3.0, 1.5],
            [2.5, 3.0],
            [-2.0, -1.0],
            [-3.0, -2.5],
            [-1.5, -2.0],
        ];
        let labels = [5, 5, 5, 9, 9, 9];
        let k = linear_gram(&x);
        let p = SvmParams {
            c: 10.0,
            ..SvmParams::default()
        };
        let model = svm_train(&k, &labels, &p).unwrap();
        assert_eq!(model.predict(&k).unwrap(), labels.to_vec());
        let m = &model.machines[0];
        assert!(m.dual_coefs.iter().all(|c| c.abs() <= 10.0 + 1e-12));
        assert!(m.dual_coefs.iter().sum::<f64>().abs() < 1e-6);
    }

    #[test]
    fn label_flip_negates_decisions() {
        let x: [[f64; 2]; 6] = [
            [1.0, 0.2],
            [0.8, 1.1],
            [-0.3, 0.9],
            [-1.0, -0.4],
            [0.1, -1.2],
            [1.3, -0.5],
        ];
        let y = [1.0, 1.0, -1.0, -1.0, -1.0, 1.0];
        let k = Matrix::from_fn(6, 6, |i, j| {
            let d = (x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2);
            (-d).exp()
        });
        let p = SvmParams {
            c: 1.0,
            seed: 3,
            ..SvmParams::default()
        };
        let a = train_binary(&k, &y, &p).unwrap();
        let flipped: Vec<f64> = y.iter().map(|t| -t).collect();
        let b = train_binary(&k, &flipped, &p).unwrap();
        for i in 0..6 {
            assert!((a.decision(k.row(i)) + b.decision(k.row(i))).abs() < 1e-9);
        }
    }

    #[test]
    fn one_vs_rest_tie_goes_to_lowest_class() {
        let machine = BinarySvm {
            dual_coefs: vec![],
            support: vec![],
            bias: 0.5,
            converged: true,
            passes: 1,
        };
        let model = SvmModel {
            c: 1.0,
            classes: vec![2, 4, 7],
            machines: vec![machine; 3],
            n_train: 1,
        };
        assert_eq!(model.predict(&Matrix::zeros(1, 1)).unwrap(), vec![2]);
    }

    #[test]
    fn predict_dimension_mismatch() {
        let model = svm_train(&Matrix::identity(2), &[0, 1], &SvmParams::default()).unwrap();
        assert!(matches!(
            model.predict(&Matrix::zeros(1, 3)),
            Err(MlError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn max_passes_flags_non_convergence() {
        let x: [[f64; 2]; 6] = [
            [1.0, 0.2],
            [0.8, 1.1],
            [-0.3, 0.9],
            [-1.0, -0.4],
            [0.1, -1.2],
            [1.3, -0.5],
        ];
        let k = linear_gram(&x);
        let y = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let p = SvmParams {
            c: 100.0,
            max_passes: 1,
            ..SvmParams::default()
        };
        let m = train_binary(&k, &y, &p).unwrap();
        assert_eq!(m.passes, 1);
        assert!(!m.converged);
    }
}
