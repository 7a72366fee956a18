//! Experiment orchestration: sparsity sweeps, calibration A/B comparisons
//! and report files.

mod config;
mod report;
mod sweep;

pub use config::{CalibAbSpec, CalibrationSpec, EvalSpec, ExperimentConfig, JudgeSpec};
pub use report::{csv_string, emit_report, json_string, plot_data, read_csv_report, ReportFormat, HEADER};
pub use sweep::{
    compare_calibrations, evaluate_model, generate_answer, load_calibration, make_row, run_calibration_comparison,
    run_sweep, sweep_model, CalibTable, EvalSet, JudgeRun, ModelMetrics, SweepRow, BASE_METHOD, NO_CALIBRATION,
};

use std::path::Path;

use crate::error::Result;

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>_plot.json` into `dir`.
pub fn write_reports(rows: &[SweepRow], dir: &Path, stem: &str) -> Result<()> {
    emit_report(rows, ReportFormat::Csv, &dir.join(format!("{stem}.csv")))?;
    emit_report(rows, ReportFormat::Json, &dir.join(format!("{stem}.json")))?;
    emit_report(rows, ReportFormat::Plot, &dir.join(format!("{stem}_plot.json")))
}
