//! Experiment configuration, end-to-end runs with on-disk artifacts, model
//! files, and the cross-run report.

mod config;
mod model_file;
mod report;
mod run;

pub use config::{DatasetSource, ExperimentConfig, SyntheticSource};
pub use model_file::{load_ensemble, save_ensemble, SavedModel, SavedParam};
pub use report::{read_metrics, report, report_csv, report_table, ReportRow};
pub use run::{
    aggregate_rows, evaluate, execute_method, final_train_seed, metrics_csv, run, run_search,
    shift_seed, MethodOutput, MetricRow, RunManifest, RunSummary, SeedManifest, METRICS_HEADER,
};
