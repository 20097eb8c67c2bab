//! Precomputed-kernel learning: kernel PCA, SMO-trained SVMs, evaluation
//! metrics, synthetic data and the server-side training pipeline.

use thiserror::Error;

pub mod cv;
pub mod kpca;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod svm;
pub mod synthetic;

pub use kpca::{center_gram, kpca_fit, kpca_transform, Centering, KpcaModel};
pub use metrics::{classification_metrics, regression_metrics, Metrics};
pub use pipeline::{run_pipeline, MlTask, PipelineOutput, SvmSettings, TrainedModel};
pub use svm::{svm_train, train_binary, BinarySvm, SvmModel, SvmParams};
pub use synthetic::{gen_synthetic, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("only {usable} usable eigenvalues")]
    RankDeficient { usable: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("invalid penalty C = {0}")]
    InvalidPenalty(f64),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("task requires labels")]
    MissingLabels,
}

fn require_square(k: &crate::linalg::Matrix) -> Result<usize, MlError> {
    if !k.is_square() {
        return Err(MlError::NotSquare {
            rows: k.rows(),
            cols: k.cols(),
        });
    }
    Ok(k.rows())
}
