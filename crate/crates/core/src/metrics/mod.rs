//! Ensemble-aware objectives on the tape, evaluation metrics on plain
//! probability matrices, and the dataset-shift corruption.

mod loss;
mod report;
mod shift;

pub use loss::{
    arch_val_loss, ensemble_mean, ensemble_train_loss, jsd_diversity, smoothed_ensemble_loss,
    PROB_FLOOR,
};
pub use report::{
    ece, ensemble_average, error, nll, oracle_ensemble_nll, MetricReport, PredictionMatrix,
    ProbMatrix,
};
pub use shift::{apply_shift, MAX_SEVERITY};
