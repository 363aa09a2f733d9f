//! One-shot searches (PC-DARTS, DrNAS, RandomNAS), the bilevel loop, final
//! training, forward selection, the baseline ensembles, and step budgets.

mod baselines;
mod bilevel;
mod budget;
pub mod dirichlet;
mod hyper;
mod methods;
pub(crate) use methods::derive_seed;
mod optim;
mod select;
#[cfg(test)]
mod tests;
mod train;

pub use baselines::{build_baseline, BaselineOutcome, Ensemble, Member, Method};
pub use bilevel::{bilevel_search_step, ArchVars, SearchState, StepLoss, WeightDraw};
pub use budget::{plan_budget, BudgetLedger};
pub use hyper::{steps_per_epoch, SearchHyperparams, TrainHyperparams};
pub use methods::{
    drnas_search, pcdarts_search, prune_ops, randomnas_search, search_split, select_min,
    supernet_predictions, EpochLog, SearchHook, SearchOutcome, EVAL_CHUNK,
};
pub use optim::{cosine_lr, Adam, Sgd};
pub use select::{forward_select, subset_nll};
pub use train::{
    discrete_step, eval_noise_seed, predict, predict_split, train_discrete, TrainOutcome,
};
