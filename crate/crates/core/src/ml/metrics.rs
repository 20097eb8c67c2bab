//! Classification and regression scores. Definitions follow the usual
//! conventions: F1 with zero division scored as 0, one-vs-rest ROC AUC
//! averaged over classes, and the coefficient of determination averaged
//! over output columns.

use serde::{Deserialize, Serialize};

use super::MlError;
use crate::linalg::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

fn check_len(a: usize, b: usize) -> Result<(), MlError> {
    if a != b {
        return Err(MlError::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    if a == 0 {
        return Err(MlError::UndefinedMetric("no samples".into()));
    }
    Ok(())
}

fn sorted_labels(a: &[i32], b: &[i32]) -> Vec<i32> {
    let mut l: Vec<i32> = a.iter().chain(b).copied().collect();
    l.sort_unstable();
    l.dedup();
    l
}

/// Macro- and micro-averaged F1 over the union of observed labels.
pub fn f1_scores(y_true: &[i32], y_pred: &[i32]) -> Result<(f64, f64), MlError> {
    check_len(y_true.len(), y_pred.len())?;
    let labels = sorted_labels(y_true, y_pred);
    let mut macro_sum = 0.0;
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for &l in &labels {
        let mut tp = 0;
        let mut fp = 0;
        let mut fneg = 0;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == l, p == l) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        macro_sum += f1(tp, fp, fneg);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    Ok((macro_sum / labels.len() as f64, f1(tp_all, fp_all, fn_all)))
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks for tied scores.
pub fn roc_auc_binary(positive: &[bool], scores: &[f64]) -> Result<f64, MlError> {
    check_len(positive.len(), scores.len())?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MlError::UndefinedMetric(
            "ROC AUC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += avg_rank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC AUC from per-class scores (`n x classes.len()`). Two classes use the
/// score column of `classes[1]`; more use the unweighted one-vs-rest mean.
pub fn roc_auc(y_true: &[i32], classes: &[i32], scores: &Matrix) -> Result<f64, MlError> {
    check_len(y_true.len(), scores.rows())?;
    if scores.cols() != classes.len() {
        return Err(MlError::DimensionMismatch {
            expected: classes.len(),
            got: scores.cols(),
        });
    }
    if classes.len() < 2 {
        return Err(MlError::UndefinedMetric(
            "ROC AUC needs at least two classes".into(),
        ));
    }
    let column = |c: usize| {
        (0..scores.rows())
            .map(|i| scores[(i, c)])
            .collect::<Vec<_>>()
    };
    if classes.len() == 2 {
        let pos: Vec<bool> = y_true.iter().map(|&t| t == classes[1]).collect();
        return roc_auc_binary(&pos, &column(1));
    }
    let mut total = 0.0;
    for (c, &cls) in classes.iter().enumerate() {
        let pos: Vec<bool> = y_true.iter().map(|&t| t == cls).collect();
        total += roc_auc_binary(&pos, &column(c))?;
    }
    Ok(total / classes.len() as f64)
}

/// F1 scores plus ROC AUC. Without continuous scores, AUC is computed from
/// one-hot encodings of the predicted labels.
pub fn classification_metrics(
    y_true: &[i32],
    y_pred: &[i32],
    scores: Option<(&[i32], &Matrix)>,
) -> Result<Metrics, MlError> {
    let (f1_macro, f1_micro) = f1_scores(y_true, y_pred)?;
    let roc_auc = match scores {
        Some((classes, s)) => roc_auc(y_true, classes, s)?,
        None => {
            let classes = sorted_labels(y_true, y_pred);
            let onehot = Matrix::from_fn(y_pred.len(), classes.len(), |i, c| {
                if y_pred[i] == classes[c] {
                    1.0
                } else {
                    0.0
                }
            });
            roc_auc(y_true, &classes, &onehot)?
        }
    };
    Ok(Metrics {
        f1_macro: Some(f1_macro),
        f1_micro: Some(f1_micro),
        roc_auc: Some(roc_auc),
        ..Metrics::default()
    })
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MlError> {
    check_len(y_true.len(), y_pred.len())?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y_true.len() as f64)
}

pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MlError> {
    check_len(y_true.len(), y_pred.len())?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MlError::UndefinedMetric("R² of a constant target".into()));
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// MSE over all entries and R² averaged over columns.
pub fn regression_metrics(y_true: &Matrix, y_pred: &Matrix) -> Result<Metrics, MlError> {
    check_len(y_true.rows(), y_pred.rows())?;
    if y_true.cols() != y_pred.cols() || y_true.cols() == 0 {
        return Err(MlError::DimensionMismatch {
            expected: y_true.cols(),
            got: y_pred.cols(),
        });
    }
    let m = mse(y_true.as_slice(), y_pred.as_slice())?;
    let mut r2_sum = 0.0;
    for c in 0..y_true.cols() {
        let t: Vec<f64> = (0..y_true.rows()).map(|i| y_true[(i, c)]).collect();
        let p: Vec<f64> = (0..y_pred.rows()).map(|i| y_pred[(i, c)]).collect();
        r2_sum += r2(&t, &p)?;
    }
    Ok(Metrics {
        mse: Some(m),
        r2: Some(r2_sum / y_true.cols() as f64),
        ..Metrics::default()
    })
}
