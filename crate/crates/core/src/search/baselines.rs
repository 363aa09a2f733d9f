use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::TrainHyperparams;
use super::methods::{derive_seed, select_min};
use super::select::forward_select;
use super::train::{eval_noise_seed, predict_split, train_discrete, TrainOutcome};
use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, PredictionMatrix};
use crate::space::{sample_genotype_with, DiscreteNet, GenotypeSpec, ModelSpec, MultiHeadGenotype};

/// Every ensemble-construction method a run can use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcdarts,
    Drnas,
    Randomnas,
    MheRs,
    MheSample,
    NesRs,
    DeepensSample,
    DeepensRs,
    HyperdeepensRs,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Pcdarts,
        Method::Drnas,
        Method::Randomnas,
        Method::MheRs,
        Method::MheSample,
        Method::NesRs,
        Method::DeepensSample,
        Method::DeepensRs,
        Method::HyperdeepensRs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pcdarts => "pcdarts",
            Method::Drnas => "drnas",
            Method::Randomnas => "randomnas",
            Method::MheRs => "mhe_rs",
            Method::MheSample => "mhe_sample",
            Method::NesRs => "nes_rs",
            Method::DeepensSample => "deepens_sample",
            Method::DeepensRs => "deepens_rs",
            Method::HyperdeepensRs => "hyperdeepens_rs",
        }
    }

    /// Whether the method runs a one-shot search before final training.
    pub fn is_search(self) -> bool {
        matches!(self, Method::Pcdarts | Method::Drnas | Method::Randomnas)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}`")))
    }
}

/// One trained network of an ensemble.
#[derive(Clone, Debug)]
pub struct Member {
    pub net: DiscreteNet,
    pub seed: u64,
    pub tag: String,
}

/// Trained networks whose heads together form the ensemble.
#[derive(Clone, Debug, Default)]
pub struct Ensemble {
    pub members: Vec<Member>,
}

impl Ensemble {
    pub fn from_outcome(out: TrainOutcome, seed: u64, tag: impl Into<String>) -> Self {
        Ensemble {
            members: vec![Member {
                net: out.net,
                seed,
                tag: tag.into(),
            }],
        }
    }

    /// Every head of every member, in order.
    pub fn predictions(&self, split: &Split) -> Result<PredictionMatrix> {
        let mut heads = Vec::new();
        for m in &self.members {
            heads.extend(predict_split(&m.net, split, eval_noise_seed(m.seed))?.members);
        }
        PredictionMatrix::new(heads, split.labels.clone())
    }

    pub fn num_params(&self) -> usize {
        self.members.iter().map(|m| m.net.num_params()).sum()
    }

    pub fn genotypes(&self) -> Vec<MultiHeadGenotype> {
        self.members
            .iter()
            .map(|m| m.net.genotype.clone())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub ensemble: Ensemble,
    pub val: MetricReport,
    pub steps: u64,
    pub models_trained: u64,
    /// Validation NLL of every model trained for a random-search pool.
    pub pool_nll: Vec<f64>,
}

fn single_head(spec: &ModelSpec) -> GenotypeSpec {
    GenotypeSpec {
        heads: 1,
        ..spec.genotype_spec()
    }
}

struct Pool {
    outcomes: Vec<(TrainOutcome, u64, String)>,
    steps: u64,
}

impl Pool {
    fn new() -> Self {
        Pool {
            outcomes: Vec::new(),
            steps: 0,
        }
    }

    fn train(
        &mut self,
        spec: &ModelSpec,
        g: &MultiHeadGenotype,
        data: &DatasetBundle,
        hp: &TrainHyperparams,
        seed: u64,
        tag: String,
    ) -> Result<()> {
        let out = train_discrete(spec, g, data, hp, seed)?;
        self.steps += out.steps;
        self.outcomes.push((out, seed, tag));
        Ok(())
    }

    fn nlls(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.0.val.nll).collect()
    }

    fn best(&self) -> usize {
        select_min(&self.nlls()).expect("non-empty pool")
    }

    fn take(self, idx: &[usize]) -> (Ensemble, u64, u64, Vec<f64>) {
        let nlls = self.nlls();
        let trained = self.outcomes.len() as u64;
        let mut slots: Vec<Option<(TrainOutcome, u64, String)>> =
            self.outcomes.into_iter().map(Some).collect();
        let members = idx
            .iter()
            .map(|&i| {
                let (out, seed, tag) = slots[i].take().expect("distinct members");
                Member {
                    net: out.net,
                    seed,
                    tag,
                }
            })
            .collect();
        (Ensemble { members }, self.steps, trained, nlls)
    }

    /// Single-head pool predictions (one member per model).
    fn val_pool(&self) -> Result<PredictionMatrix> {
        let members = self
            .outcomes
            .iter()
            .flat_map(|o| o.0.val_preds.members.clone())
            .collect();
        PredictionMatrix::new(members, self.outcomes[0].0.val_preds.labels.clone())
    }
}

/// Builds one of the six baseline ensembles of size `spec.heads`.
///
/// Random-search pools hold `pool_size` trained models. Returns an error for
/// the one-shot search methods.
pub fn build_baseline(
    kind: Method,
    spec: &ModelSpec,
    data: &DatasetBundle,
    hp: &TrainHyperparams,
    pool_size: usize,
    seed: u64,
) -> Result<BaselineOutcome> {
    if kind.is_search() {
        return Err(Error::invalid(
            "build_baseline",
            format!("`{kind}` is a search method, not a baseline"),
        ));
    }
    if pool_size == 0 {
        return Err(Error::invalid(
            "build_baseline",
            "pool size must be at least 1",
        ));
    }
    let m = spec.heads;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20));
    let member_seed = |i: usize| derive_seed(seed, 100 + i as u64);
    let one = single_head(spec);
    let mut pool = Pool::new();
    let selected: Vec<usize> = match kind {
        Method::DeepensSample => {
            let g = sample_genotype_with(&mut rng, &one, spec.backbone);
            for i in 0..m {
                pool.train(spec, &g, data, hp, member_seed(i), format!("seed{i}"))?;
            }
            (0..m).collect()
        }
        Method::DeepensRs | Method::HyperdeepensRs => {
            for i in 0..pool_size {
                let g = sample_genotype_with(&mut rng, &one, spec.backbone);
                pool.train(spec, &g, data, hp, member_seed(i), format!("sample{i}"))?;
            }
            let best = pool.best();
            let g = pool.outcomes[best].0.net.genotype.clone();
            if kind == Method::DeepensRs {
                let mut chosen = vec![best];
                for i in 1..m {
                    pool.train(
                        spec,
                        &g,
                        data,
                        hp,
                        member_seed(pool_size + i),
                        format!("seed{i}"),
                    )?;
                    chosen.push(pool.outcomes.len() - 1);
                }
                chosen
            } else {
                let search = Pool::new();
                let mut variants = search;
                for i in 0..pool_size {
                    let ls = [0.0, 0.05, 0.1, 0.2][rng.random_range(0..4)];
                    let wd = 10f64.powf(rng.random_range(-5.0..-3.0));
                    let vhp = TrainHyperparams {
                        label_smoothing: ls,
                        weight_decay: wd,
                        ..hp.clone()
                    };
                    variants.train(
                        spec,
                        &g,
                        data,
                        &vhp,
                        member_seed(pool_size + i),
                        format!("ls{ls}_wd{wd:.2e}"),
                    )?;
                }
                let chosen = forward_select(&variants.val_pool()?, m, false)?;
                variants.steps += pool.steps;
                let searched = pool.outcomes.len() as u64;
                let (ensemble, steps, trained, nlls) = variants.take(&chosen);
                let val = MetricReport::compute(&ensemble.predictions(&data.val)?)?;
                return Ok(BaselineOutcome {
                    ensemble,
                    val,
                    steps,
                    models_trained: trained + searched,
                    pool_nll: nlls,
                });
            }
        }
        Method::NesRs => {
            for i in 0..pool_size {
                let g = sample_genotype_with(&mut rng, &one, spec.backbone);
                pool.train(spec, &g, data, hp, member_seed(i), format!("sample{i}"))?;
            }
            forward_select(&pool.val_pool()?, m, false)?
        }
        Method::MheSample => {
            let g = sample_genotype_with(&mut rng, &spec.genotype_spec(), spec.backbone);
            pool.train(spec, &g, data, hp, member_seed(0), "sample".into())?;
            vec![0]
        }
        Method::MheRs => {
            for i in 0..pool_size {
                let g = sample_genotype_with(&mut rng, &spec.genotype_spec(), spec.backbone);
                pool.train(spec, &g, data, hp, member_seed(i), format!("sample{i}"))?;
            }
            vec![pool.best()]
        }
        Method::Pcdarts | Method::Drnas | Method::Randomnas => unreachable!(),
    };
    let (ensemble, steps, trained, nlls) = pool.take(&selected);
    let val = MetricReport::compute(&ensemble.predictions(&data.val)?)?;
    Ok(BaselineOutcome {
        ensemble,
        val,
        steps,
        models_trained: trained,
        pool_nll: nlls,
    })
}
