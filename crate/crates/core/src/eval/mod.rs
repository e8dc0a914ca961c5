//! Metrics, cross-validation, inference-time ablations, baselines and feature export.

pub mod ablate;
pub mod baseline;
pub mod cv;
pub mod export;
pub mod metrics;

pub use ablate::{ablate, AblationReport, ClassAttention, ConditionRow};
pub use baseline::{train_baseline, AttentionMil, BaselineKind, BaselineSpec, SingleStream};
pub use cv::{run_cv, run_cv_with, CvReport, CvSummary, FoldResult};
pub use export::{export_features, render_features, FeatureRow};
pub use metrics::{compute_metrics, Metrics};
