use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{mean_std, MetricRow};
use crate::error::{Error, Result};
use crate::search::Method;

/// One comparison-table row: a (method, M) group over its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    #[serde(rename = "M")]
    pub m: usize,
    pub seeds: usize,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub error_mean: f64,
    pub error_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub oracle_nll_mean: f64,
    pub oracle_nll_std: f64,
    pub steps_mean: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<MetricRow>, _>>()?)
}

/// Merges per-seed rows of `split` at `severity` into one row per (method, M),
/// in order of first appearance. Aggregate rows in the input are ignored.
pub fn report(rows: &[MetricRow], split: &str, severity: usize) -> Vec<ReportRow> {
    let per_seed: Vec<&MetricRow> = rows
        .iter()
        .filter(|r| r.split == split && r.severity == severity && r.seed.parse::<u64>().is_ok())
        .collect();
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in &per_seed {
        if !keys.contains(&(r.method, r.m)) {
            keys.push((r.method, r.m));
        }
    }
    keys.into_iter()
        .map(|(method, m)| {
            let g: Vec<&&MetricRow> = per_seed
                .iter()
                .filter(|r| r.method == method && r.m == m)
                .collect();
            let col =
                |f: fn(&MetricRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (nll, err, ece, oracle, steps) = (
                col(|r| r.nll),
                col(|r| r.error),
                col(|r| r.ece),
                col(|r| r.oracle_nll),
                col(|r| r.steps as f64),
            );
            ReportRow {
                method,
                m,
                seeds: g.len(),
                nll_mean: nll.0,
                nll_std: nll.1,
                error_mean: err.0,
                error_std: err.1,
                ece_mean: ece.0,
                ece_std: ece.1,
                oracle_nll_mean: oracle.0,
                oracle_nll_std: oracle.1,
                steps_mean: steps.0,
            }
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid("report_csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("report_csv", e.to_string()))
}

/// Fixed-width text rendering with `mean ± std` cells.
pub fn report_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<16} {:>2} {:>5} {:>17} {:>17} {:>17} {:>17} {:>10}\n",
        "method", "M", "seeds", "nll", "error", "ece", "oracle_nll", "steps"
    );
    for r in rows {
        let pm = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
        out.push_str(&format!(
            "{:<16} {:>2} {:>5} {:>17} {:>17} {:>17} {:>17} {:>10.0}\n",
            r.method.name(),
            r.m,
            r.seeds,
            pm(r.nll_mean, r.nll_std),
            pm(r.error_mean, r.error_std),
            pm(r.ece_mean, r.ece_std),
            pm(r.oracle_nll_mean, r.oracle_nll_std),
            r.steps_mean
        ));
    }
    out
}
