use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::model_file::save_ensemble;
use crate::data::{sha256_hex, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::metrics::{apply_shift, MetricReport};
use crate::search::{
    build_baseline, derive_seed, drnas_search, pcdarts_search, randomnas_search, train_discrete,
    BudgetLedger, Ensemble, Method, SearchHook, SearchHyperparams, SearchOutcome,
};
use crate::space::ModelSpec;

/// One line of the metrics CSV. `seed` is `mean` or `std` on aggregate rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub seed: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub split: String,
    pub severity: usize,
    pub nll: f64,
    pub error: f64,
    pub ece: f64,
    pub oracle_nll: f64,
    pub params: usize,
    pub steps: u64,
    pub wall_sec: f64,
}

pub const METRICS_HEADER: &str =
    "method,seed,M,split,severity,nll,error,ece,oracle_nll,params,steps,wall_sec";

/// Runs the one-shot search of `method`.
pub fn run_search(
    method: Method,
    data: &DatasetBundle,
    spec: &ModelSpec,
    hp: &SearchHyperparams,
    seed: u64,
    hook: Option<&mut dyn SearchHook>,
) -> Result<SearchOutcome> {
    match method {
        Method::Pcdarts => pcdarts_search(data, spec, hp, seed, hook),
        Method::Drnas => drnas_search(data, spec, hp, seed, hook),
        Method::Randomnas => randomnas_search(data, spec, hp, seed),
        other => Err(Error::invalid(
            "run_search",
            format!("`{other}` is not a search method"),
        )),
    }
}

/// Seed of the final training after a search with `seed`.
pub fn final_train_seed(seed: u64) -> u64 {
    derive_seed(seed, 60)
}

/// Seed of the shifted test images for run seed `seed`.
pub fn shift_seed(seed: u64) -> u64 {
    derive_seed(seed, 50)
}

pub struct MethodOutput {
    pub ensemble: Ensemble,
    pub ledger: BudgetLedger,
    pub search: Option<SearchOutcome>,
}

/// Builds the configured ensemble for one seed: search then final training,
/// or a baseline.
pub fn execute_method(
    cfg: &ExperimentConfig,
    data: &DatasetBundle,
    seed: u64,
) -> Result<MethodOutput> {
    if cfg.method.is_search() {
        let out = run_search(cfg.method, data, &cfg.model, &cfg.search, seed, None)?;
        let ts = final_train_seed(seed);
        let trained = train_discrete(&cfg.model, &out.genotype, data, &cfg.train, ts)?;
        let ledger = BudgetLedger::new(cfg.method, out.steps, trained.steps, 1);
        Ok(MethodOutput {
            ensemble: Ensemble::from_outcome(trained, ts, "final"),
            ledger,
            search: Some(out),
        })
    } else {
        let b = build_baseline(
            cfg.method,
            &cfg.model,
            data,
            &cfg.train,
            cfg.pool_size,
            seed,
        )?;
        Ok(MethodOutput {
            ledger: BudgetLedger::new(cfg.method, 0, b.steps, b.models_trained),
            ensemble: b.ensemble,
            search: None,
        })
    }
}

/// Validation metrics, then test metrics at every severity.
pub fn evaluate(
    e: &Ensemble,
    data: &DatasetBundle,
    severities: &[usize],
    seed: u64,
) -> Result<Vec<(String, usize, MetricReport)>> {
    let mut out = vec![(
        "val".to_string(),
        0,
        MetricReport::compute(&e.predictions(&data.val)?)?,
    )];
    for &s in severities {
        let images = apply_shift(&data.test.images, s, shift_seed(seed))?;
        let split = Split::new(images, data.test.labels.clone())?;
        out.push((
            "test".to_string(),
            s,
            MetricReport::compute(&e.predictions(&split)?)?,
        ));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub method: Method,
    pub config_sha256: String,
    pub version: String,
    pub status: String,
    pub error: Option<String>,
    pub wall_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub version: String,
    pub method: Method,
    pub dataset_provenance: String,
    pub seeds: Vec<u64>,
    pub failed: Vec<u64>,
    pub wall_sec: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<MetricRow>,
    pub ledgers: Vec<BudgetLedger>,
    pub failed: Vec<(u64, String)>,
    pub config_sha256: String,
    pub out_dir: PathBuf,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and sample-std rows over seeds for every (split, severity) present.
pub fn aggregate_rows(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let k = (r.split.clone(), r.severity);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (split, severity) in keys {
        let g: Vec<&MetricRow> = rows
            .iter()
            .filter(|r| r.split == split && r.severity == severity)
            .collect();
        let col = |f: fn(&MetricRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (nll, ece, err, oracle, params, steps, wall) = (
            col(|r| r.nll),
            col(|r| r.ece),
            col(|r| r.error),
            col(|r| r.oracle_nll),
            col(|r| r.params as f64),
            col(|r| r.steps as f64),
            col(|r| r.wall_sec),
        );
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let p = |v: (f64, f64)| if pick == 0 { v.0 } else { v.1 };
            out.push(MetricRow {
                method: g[0].method,
                seed: label.to_string(),
                m: g[0].m,
                split: split.clone(),
                severity,
                nll: p(nll),
                error: p(err),
                ece: p(ece),
                oracle_nll: p(oracle),
                params: p(params).round() as usize,
                steps: p(steps).round() as u64,
                wall_sec: p(wall),
            });
        }
    }
    out
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        return Ok(format!("{METRICS_HEADER}\n"));
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid("metrics_csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("metrics_csv", e.to_string()))
}

fn run_one(
    cfg: &ExperimentConfig,
    data: &DatasetBundle,
    seed: u64,
    dir: &Path,
) -> Result<(Vec<MetricRow>, BudgetLedger)> {
    let start = Instant::now();
    let out = execute_method(cfg, data, seed)?;
    let evals = evaluate(&out.ensemble, data, &cfg.severities, seed)?;
    let wall = start.elapsed().as_secs_f64();
    let genotypes = out.ensemble.genotypes();
    if genotypes.len() == 1 {
        genotypes[0].save(&dir.join("genotype.json"))?;
    } else {
        for (i, g) in genotypes.iter().enumerate() {
            g.save(&dir.join(format!("member{i}.genotype.json")))?;
        }
    }
    if let Some(s) = &out.search {
        if let Some(arch) = &s.arch {
            write(&dir.join("arch.json"), &serde_json::to_vec_pretty(arch)?)?;
        }
        write(
            &dir.join("search_history.json"),
            &serde_json::to_vec_pretty(&s.history)?,
        )?;
    }
    write(
        &dir.join("budget.json"),
        &serde_json::to_vec_pretty(&out.ledger)?,
    )?;
    save_ensemble(&out.ensemble, &dir.join("ensemble.json"))?;
    let params = out.ensemble.num_params();
    let rows = evals
        .into_iter()
        .map(|(split, severity, r)| MetricRow {
            method: cfg.method,
            seed: seed.to_string(),
            m: cfg.model.heads,
            split,
            severity,
            nll: r.nll,
            error: r.error,
            ece: r.ece,
            oracle_nll: r.oracle_nll,
            params,
            steps: out.ledger.total_steps,
            wall_sec: wall,
        })
        .collect();
    Ok((rows, out.ledger))
}

/// Executes every seed of `cfg`, writing artifacts under `out`.
///
/// `config_bytes` is the exact config document (hashed and copied);
/// `base` resolves a relative dataset path. A failing seed is recorded in
/// its manifest and skipped.
pub fn run(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    base: &Path,
    out: &Path,
) -> Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = sha256_hex(config_bytes);
    write(&out.join("config.json"), config_bytes)?;
    let data = cfg.dataset.load(base)?;
    cfg.check_data(&data)?;
    let provenance = serde_json::to_string(&data.provenance)?;
    let version = env!("CARGO_PKG_VERSION").to_string();

    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    let mut failed = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let t = Instant::now();
        let result = run_one(cfg, &data, seed, &dir);
        let error = match result {
            Ok((r, l)) => {
                rows.extend(r);
                ledgers.push(l);
                None
            }
            Err(e) => {
                failed.push((seed, e.to_string()));
                Some(e.to_string())
            }
        };
        let manifest = SeedManifest {
            seed,
            method: cfg.method,
            config_sha256: hash.clone(),
            version: version.clone(),
            status: if error.is_none() { "ok" } else { "error" }.to_string(),
            error,
            wall_sec: t.elapsed().as_secs_f64(),
        };
        write(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
    }
    let mut all = rows.clone();
    if !rows.is_empty() {
        all.extend(aggregate_rows(&rows));
    }
    write(&out.join("metrics.csv"), metrics_csv(&all)?.as_bytes())?;
    let manifest = RunManifest {
        config_sha256: hash.clone(),
        version,
        method: cfg.method,
        dataset_provenance: provenance,
        seeds: cfg.seeds.clone(),
        failed: failed.iter().map(|f| f.0).collect(),
        wall_sec: start.elapsed().as_secs_f64(),
    };
    write(
        &out.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(RunSummary {
        rows: all,
        ledgers,
        failed,
        config_sha256: hash,
        out_dir: out.to_path_buf(),
    })
}
