use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::search::{derive_seed, train_discrete, TrainHyperparams};
use crate::space::{sample_genotype_with, ModelSpec, MultiHeadGenotype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretEntry {
    #[serde(rename = "M")]
    pub m: usize,
    pub sample_id: usize,
    pub seed: u64,
    pub val_nll: f64,
    pub regret: f64,
}

/// Summary of one ensemble size.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretGroup {
    pub m: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// Regrets in ascending order.
    pub curve: Vec<f64>,
}

/// Validation NLLs of independently sampled and trained genotypes, grouped by M.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretStudy {
    pub entries: Vec<RegretEntry>,
}

impl RegretStudy {
    /// Builds the study from `(M, seed, val_nll)` triples in sample order.
    pub fn from_samples(samples: &[(usize, u64, f64)]) -> Self {
        let mut entries = Vec::with_capacity(samples.len());
        let mut seen: Vec<usize> = Vec::new();
        for &(m, _, _) in samples {
            if seen.contains(&m) {
                continue;
            }
            seen.push(m);
            let group: Vec<&(usize, u64, f64)> = samples.iter().filter(|s| s.0 == m).collect();
            let best = group.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
            for (i, s) in group.iter().enumerate() {
                entries.push(RegretEntry {
                    m,
                    sample_id: i,
                    seed: s.1,
                    val_nll: s.2,
                    regret: s.2 - best,
                });
            }
        }
        RegretStudy { entries }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.m) {
                out.push(e.m);
            }
        }
        out
    }

    pub fn group(&self, m: usize) -> Option<RegretGroup> {
        let nll: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.m == m)
            .map(|e| e.val_nll)
            .collect();
        if nll.is_empty() {
            return None;
        }
        let n = nll.len() as f64;
        let mean = nll.iter().sum::<f64>() / n;
        let std = if nll.len() > 1 {
            (nll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut curve: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.m == m)
            .map(|e| e.regret)
            .collect();
        curve.sort_by(f64::total_cmp);
        Some(RegretGroup {
            m,
            mean,
            std,
            curve,
        })
    }

    pub fn groups(&self) -> Vec<RegretGroup> {
        self.sizes()
            .into_iter()
            .filter_map(|m| self.group(m))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)?;
        }
        super::finish_csv(w)
    }
}

/// Genotype sampled for entry `i` of ensemble size `m`, with its training seed.
pub fn regret_sample(
    spec: &ModelSpec,
    m: usize,
    samples: usize,
    seed: u64,
) -> Vec<(MultiHeadGenotype, u64)> {
    let spec = ModelSpec {
        heads: m,
        ..spec.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 40 + m as u64));
    (0..samples)
        .map(|i| {
            let g = sample_genotype_with(&mut rng, &spec.genotype_spec(), spec.backbone);
            (g, derive_seed(seed, 10_000 + 1000 * m as u64 + i as u64))
        })
        .collect()
}

/// For every M in `sizes`, samples `samples` random genotypes, trains each
/// from scratch with `hp`, and records its validation NLL.
pub fn regret_study(
    data: &DatasetBundle,
    spec: &ModelSpec,
    sizes: &[usize],
    samples: usize,
    hp: &TrainHyperparams,
    seed: u64,
) -> Result<RegretStudy> {
    if samples < 2 {
        return Err(Error::invalid(
            "regret_study",
            "need at least 2 samples per ensemble size",
        ));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid(
            "regret_study",
            "ensemble sizes must be non-empty and positive",
        ));
    }
    let mut out = Vec::with_capacity(sizes.len() * samples);
    for &m in sizes {
        let spec_m = ModelSpec {
            heads: m,
            ..spec.clone()
        };
        for (g, s) in regret_sample(spec, m, samples, seed) {
            let trained = train_discrete(&spec_m, &g, data, hp, s)?;
            out.push((m, s, trained.val.nll));
        }
    }
    Ok(RegretStudy::from_samples(&out))
}
