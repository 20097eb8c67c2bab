//! Server-side training on an assembled Gram matrix.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cv::stratified_kfold;
use super::kpca::{kpca_fit, KpcaModel};
use super::metrics::{classification_metrics, Metrics};
use super::svm::{svm_train, SvmModel, SvmParams};
use super::MlError;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSettings {
    pub params: SvmParams,
    /// Cross-validation folds for choosing `C`; below 2 disables selection.
    pub folds: usize,
    /// Candidate penalties; empty means just `params.c`.
    pub c_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum MlTask {
    GramOnly,
    Kpca { components: usize },
    Svm(SvmSettings),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Kpca(KpcaModel),
    Svm(SvmModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub model: Option<TrainedModel>,
    /// Hyperparameters, diagnostics and metrics, suitable for `model.json`.
    pub summary: Value,
}

fn scores_of(model: &SvmModel, k_test: &Matrix) -> Result<(Vec<i32>, Matrix), MlError> {
    Ok((model.predict(k_test)?, model.class_scores(k_test)?))
}

fn evaluate(model: &SvmModel, k_test: &Matrix, y: &[i32]) -> Result<Metrics, MlError> {
    let (pred, scores) = scores_of(model, k_test)?;
    match classification_metrics(y, &pred, Some((&model.classes, &scores))) {
        Ok(m) => Ok(m),
        Err(MlError::UndefinedMetric(_)) => {
            let (f1_macro, f1_micro) = super::metrics::f1_scores(y, &pred)?;
            Ok(Metrics {
                f1_macro: Some(f1_macro),
                f1_micro: Some(f1_micro),
                ..Metrics::default()
            })
        }
        Err(e) => Err(e),
    }
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.collect::<Option<Vec<_>>>()?;
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn train_svm(gram: &Matrix, labels: &[i32], s: &SvmSettings) -> Result<PipelineOutput, MlError> {
    let grid = if s.c_grid.is_empty() {
        vec![s.params.c]
    } else {
        s.c_grid.clone()
    };
    let mut chosen = grid[0];
    let mut cv_rows = Vec::new();
    if s.folds >= 2 && grid.len() > 1 {
        let folds = stratified_kfold(labels, s.folds, s.params.seed)?;
        let mut best = f64::NEG_INFINITY;
        for &c in &grid {
            let params = SvmParams { c, ..s.params };
            let mut fold_metrics = Vec::with_capacity(folds.len());
            for (train, test) in &folds {
                let y_train: Vec<i32> = train.iter().map(|&i| labels[i]).collect();
                let y_test: Vec<i32> = test.iter().map(|&i| labels[i]).collect();
                let model = svm_train(&gram.select(train, train), &y_train, &params)?;
                fold_metrics.push(evaluate(&model, &gram.select(test, train), &y_test)?);
            }
            let f1_macro = mean(fold_metrics.iter().map(|m| m.f1_macro)).unwrap_or(0.0);
            let f1_micro = mean(fold_metrics.iter().map(|m| m.f1_micro));
            let roc_auc = mean(fold_metrics.iter().map(|m| m.roc_auc));
            cv_rows.push(
                json!({ "c": c, "f1_macro": f1_macro, "f1_micro": f1_micro, "roc_auc": roc_auc }),
            );
            if f1_macro > best {
                best = f1_macro;
                chosen = c;
            }
        }
    }

    let params = SvmParams {
        c: chosen,
        ..s.params
    };
    let model = svm_train(gram, labels, &params)?;
    let train_metrics = evaluate(&model, gram, labels)?;
    let summary = json!({
        "task": "svm",
        "c": chosen,
        "tol": params.tol,
        "max_passes": params.max_passes,
        "seed": params.seed,
        "classes": model.classes,
        "converged": model.converged(),
        "support_vectors": model.machines.iter().map(|m| m.support.len()).collect::<Vec<_>>(),
        "cross_validation": cv_rows,
        "train_metrics": train_metrics,
    });
    Ok(PipelineOutput {
        model: Some(TrainedModel::Svm(model)),
        summary,
    })
}

/// Runs `task` on the full Gram matrix. SVM training needs one label per row.
pub fn run_pipeline(
    gram: &Matrix,
    labels: Option<&[i32]>,
    task: &MlTask,
) -> Result<PipelineOutput, MlError> {
    match task {
        MlTask::GramOnly => Ok(PipelineOutput {
            model: None,
            summary: json!({ "task": "gram-only" }),
        }),
        MlTask::Kpca { components } => {
            let model = kpca_fit(gram, *components)?;
            let summary = json!({
                "task": "kpca",
                "requested_components": components,
                "components": model.n_components(),
                "rank_deficient": model.rank_deficient().is_some(),
                "eigenvalues": model.eigenvalues,
            });
            Ok(PipelineOutput {
                model: Some(TrainedModel::Kpca(model)),
                summary,
            })
        }
        MlTask::Svm(s) => {
            let labels = labels.ok_or(MlError::MissingLabels)?;
            train_svm(gram, labels, s)
        }
    }
}
