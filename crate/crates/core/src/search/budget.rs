use serde::{Deserialize, Serialize};

use super::baselines::Method;
use super::hyper::{steps_per_epoch, SearchHyperparams, TrainHyperparams};

/// Mini-batch steps consumed by a method. One search iteration (architecture
/// and weight update) counts as one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub method: Method,
    pub search_steps: u64,
    pub train_steps: u64,
    pub models_trained: u64,
    pub total_steps: u64,
}

impl BudgetLedger {
    pub fn new(method: Method, search_steps: u64, train_steps: u64, models_trained: u64) -> Self {
        BudgetLedger {
            method,
            search_steps,
            train_steps,
            models_trained,
            total_steps: search_steps + train_steps,
        }
    }
}

/// Step counts a run will consume, computed from the configuration alone.
///
/// `n_train` is the size of the training split, `heads` the ensemble size and
/// `pool` the random-search sample count.
pub fn plan_budget(
    method: Method,
    n_train: usize,
    heads: usize,
    pool: usize,
    search: &SearchHyperparams,
    train: &TrainHyperparams,
) -> BudgetLedger {
    let weight_half = ((n_train as f64 * search.weight_fraction).round() as usize).min(n_train);
    let search_steps = (search.epochs * steps_per_epoch(weight_half, search.batch)) as u64;
    let per_model = (train.epochs * steps_per_epoch(n_train, train.batch)) as u64;
    let (pool, heads) = (pool as u64, heads as u64);
    let (search_steps, models) = match method {
        Method::Pcdarts | Method::Drnas | Method::Randomnas => (search_steps, 1),
        Method::MheSample => (0, 1),
        Method::MheRs | Method::NesRs => (0, pool),
        Method::DeepensSample => (0, heads),
        Method::DeepensRs => (0, pool + heads.saturating_sub(1)),
        Method::HyperdeepensRs => (0, 2 * pool),
    };
    BudgetLedger::new(method, search_steps, models * per_model, models)
}
