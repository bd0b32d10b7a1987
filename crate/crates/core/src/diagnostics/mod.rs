//! Evaluation metrics, missing-modality curves and the ablation harness.

mod ablation;
mod curves;
mod metrics;

pub use ablation::{ablation_suite, AblationRow, AblationVariant};
pub use curves::{
    combinations, embedding_distance_curve, entropy_vs_missing, missing_modality_curve, retained_subsets, CurveConfig,
    DiagnosticCurve, DistanceMetric,
};
pub use metrics::{macro_f1, spearman, EvalResult};
