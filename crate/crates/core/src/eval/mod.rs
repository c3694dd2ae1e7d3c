//! Ranking metrics, seed-sweep aggregation and Welch comparisons.

mod metrics;
mod report;
mod welch;

pub use metrics::{auprc, auroc};
pub use report::{
    aggregate_report, read_samples_csv, write_samples_csv, Aggregate, Comparison, Method, Metric,
    MetricReport, MetricSample,
};
pub use welch::{
    ln_gamma, regularized_incomplete_beta, student_t_two_sided, welch_t_test, WelchResult, P_FLOOR,
};
