//! Evaluation metrics, PCA of learned representations, benchmark reports and
//! plot-ready exports.

mod export;
mod metrics;
mod pca;
mod report;

pub use export::{curve_csv, read_history, write_projection_csv, ProjectionRow};
pub use metrics::{
    classification_metrics, compute_metrics, compute_metrics_lenient, compute_metrics_with, pearson, BinaryMode,
    ClassMetrics, F1Mode, MetricOptions, MetricReport, PartialMetrics,
};
pub use pca::{pca_project, reconstruction_error, ProjectionResult};
pub use report::{make_benchmark_report, parse_benchmark_json, BenchmarkEntry, BenchmarkResults, ReportFormat};
