//! Tuning instruments: confusion sequences, per-layer weight change,
//! saturation alarms and report emission.

mod confusion;
mod report;
mod svg;
mod weights;

pub use confusion::{saturation_alarm, ConfusionMatrix, DEFAULT_SATURATION_THRESHOLD};
pub use report::{
    emit_comparison, emit_reports, load_results, mean_std, ComparisonRow, ReportMeta, Summary, RESULTS_FILE,
};
pub use svg::{line_plot, Series};
pub use weights::{weight_change, weight_change_aligned};
