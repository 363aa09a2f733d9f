use serde::{Deserialize, Serialize};

use super::loss::PROB_FLOOR;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-stochastic `[rows, classes]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    /// Checks that entries are non-negative and rows sum to 1 within 1e-8.
    pub fn new(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || data.len() != rows * classes {
            return Err(Error::invalid(
                "ProbMatrix",
                format!("{} values for {rows} x {classes}", data.len()),
            ));
        }
        for (r, row) in data.chunks(classes).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(
                    "ProbMatrix",
                    format!("row {r} is not a distribution (sum {s})"),
                ));
            }
        }
        Ok(ProbMatrix {
            rows,
            classes,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[r, c] => Self::new(r, c, t.data().to_vec()),
            s => Err(Error::invalid(
                "ProbMatrix",
                format!("expected a matrix, got shape {s:?}"),
            )),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.rows {
            return Err(Error::invalid(
                "metrics",
                format!("{} labels for {} rows", labels.len(), self.rows),
            ));
        }
        match labels.iter().enumerate().find(|(_, &y)| y >= self.classes) {
            Some((index, &label)) => Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
                index,
            }),
            None => Ok(()),
        }
    }
}

/// Per-member predictions on one labelled example set.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    pub members: Vec<ProbMatrix>,
    pub labels: Vec<usize>,
}

impl PredictionMatrix {
    pub fn new(members: Vec<ProbMatrix>, labels: Vec<usize>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("PredictionMatrix", "no members"))?;
        if members
            .iter()
            .any(|m| m.rows != first.rows || m.classes != first.classes)
        {
            return Err(Error::invalid(
                "PredictionMatrix",
                "members disagree in shape",
            ));
        }
        first.check_labels(&labels)?;
        Ok(PredictionMatrix { members, labels })
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    /// Predictions of the members at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.members[i].clone()).collect(),
            self.labels.clone(),
        )
    }
}

/// Row-wise mean of the member matrices.
pub fn ensemble_average(preds: &PredictionMatrix) -> ProbMatrix {
    let first = &preds.members[0];
    let m = preds.members.len() as f64;
    let mut data = vec![0.0; first.data.len()];
    for mem in &preds.members {
        for (d, v) in data.iter_mut().zip(&mem.data) {
            *d += v;
        }
    }
    data.iter_mut().for_each(|d| *d /= m);
    ProbMatrix {
        rows: first.rows,
        classes: first.classes,
        data,
    }
}

fn neg_log(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn nll(p: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    p.check_labels(labels)?;
    let s: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| neg_log(p.row(i)[y]))
        .sum();
    Ok(s / p.rows.max(1) as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) differs from the label.
pub fn error(p: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    p.check_labels(labels)?;
    let wrong = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(p.row(*i)) != y)
        .count();
    Ok(wrong as f64 / p.rows.max(1) as f64)
}

/// Bin `b` covers `(b/B, (b+1)/B]`.
fn bin_of(conf: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut i = ((conf * b).ceil() as usize).clamp(1, bins) - 1;
    while i > 0 && conf <= i as f64 / b {
        i -= 1;
    }
    while i + 1 < bins && conf > (i + 1) as f64 / b {
        i += 1;
    }
    i
}

/// Expected calibration error with `bins` equal-width, right-inclusive bins.
pub fn ece(p: &ProbMatrix, labels: &[usize], bins: usize) -> Result<f64> {
    p.check_labels(labels)?;
    if bins == 0 {
        return Err(Error::invalid("ece", "need at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0.0; bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = p.row(i);
        let k = argmax(row);
        let b = bin_of(row[k], bins);
        count[b] += 1;
        conf[b] += row[k];
        if k == y {
            correct[b] += 1.0;
        }
    }
    let n = p.rows.max(1) as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / n * (correct[b] / nb - conf[b] / nb).abs()
        })
        .sum())
}

/// Mean over examples of the best member's `-ln p_y`.
pub fn oracle_ensemble_nll(preds: &PredictionMatrix) -> f64 {
    let n = preds.labels.len();
    let s: f64 = preds
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            preds
                .members
                .iter()
                .map(|m| neg_log(m.row(i)[y]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    s / n.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nll: f64,
    pub error: f64,
    pub ece: f64,
    pub oracle_nll: f64,
    pub member_nll: Vec<f64>,
    pub member_error: Vec<f64>,
}

impl MetricReport {
    pub fn compute(preds: &PredictionMatrix) -> Result<Self> {
        let f = ensemble_average(preds);
        let y = &preds.labels;
        Ok(MetricReport {
            nll: nll(&f, y)?,
            error: error(&f, y)?,
            ece: ece(&f, y, 10)?,
            oracle_nll: oracle_ensemble_nll(preds),
            member_nll: preds
                .members
                .iter()
                .map(|m| nll(m, y))
                .collect::<Result<_>>()?,
            member_error: preds
                .members
                .iter()
                .map(|m| error(m, y))
                .collect::<Result<_>>()?,
        })
    }
}
