use serde::{Deserialize, Serialize};

use super::baselines::Method;
use crate::error::{Error, Result};

/// Settings of the one-shot searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchHyperparams {
    pub epochs: usize,
    pub batch: usize,
    pub w_lr: f64,
    pub w_momentum: f64,
    pub w_weight_decay: f64,
    pub a_lr: f64,
    pub a_beta1: f64,
    pub a_beta2: f64,
    pub a_weight_decay: f64,
    /// Partial-channel factor `K`.
    pub partial: usize,
    pub pcdarts_warmstart: usize,
    /// Warm-start epochs at the start of each DrNAS stage.
    pub drnas_warmstart: usize,
    pub drnas_keep_ops: usize,
    pub drnas_stage2_partial: usize,
    pub lambda_jsd: f64,
    pub eval_samples: usize,
    /// Fraction of the training split used for weights; the rest drives the architecture.
    pub weight_fraction: f64,
}

impl Default for SearchHyperparams {
    fn default() -> Self {
        SearchHyperparams {
            epochs: 50,
            batch: 64,
            w_lr: 0.1,
            w_momentum: 0.9,
            w_weight_decay: 3e-4,
            a_lr: 3e-4,
            a_beta1: 0.5,
            a_beta2: 0.999,
            a_weight_decay: 1e-3,
            partial: 4,
            pcdarts_warmstart: 15,
            drnas_warmstart: 10,
            drnas_keep_ops: 4,
            drnas_stage2_partial: 2,
            lambda_jsd: 0.1,
            eval_samples: 100,
            weight_fraction: 0.5,
        }
    }
}

fn field(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, format!("must be positive, got {v}")))
    }
}

fn unit(path: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(field(path, format!("must lie in [0, 1), got {v}")))
    }
}

impl SearchHyperparams {
    /// Epoch counts of the two DrNAS stages.
    pub fn drnas_stages(&self) -> [usize; 2] {
        let first = self.epochs / 2;
        [first, self.epochs - first]
    }

    /// Validates every field; `prefix` is prepended to error paths.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let p = |f: &str| format!("{prefix}{f}");
        if self.epochs < 2 {
            return Err(field(&p("epochs"), "need at least 2 epochs"));
        }
        if self.batch < 2 {
            return Err(field(&p("batch"), "need at least 2 examples per batch"));
        }
        positive(&p("w_lr"), self.w_lr)?;
        positive(&p("a_lr"), self.a_lr)?;
        unit(&p("w_momentum"), self.w_momentum)?;
        unit(&p("a_beta1"), self.a_beta1)?;
        unit(&p("a_beta2"), self.a_beta2)?;
        if self.w_weight_decay < 0.0 || self.a_weight_decay < 0.0 {
            return Err(field(
                &p("w_weight_decay"),
                "weight decay must be non-negative",
            ));
        }
        if self.partial == 0 {
            return Err(field(&p("partial"), "must be at least 1"));
        }
        if self.drnas_stage2_partial == 0 {
            return Err(field(&p("drnas_stage2_partial"), "must be at least 1"));
        }
        if self.drnas_keep_ops == 0 {
            return Err(field(&p("drnas_keep_ops"), "must keep at least one op"));
        }
        if !(self.lambda_jsd >= 0.0 && self.lambda_jsd.is_finite()) {
            return Err(field(&p("lambda_jsd"), "must be non-negative"));
        }
        if self.eval_samples == 0 {
            return Err(field(&p("eval_samples"), "must be at least 1"));
        }
        if !(self.weight_fraction > 0.0 && self.weight_fraction < 1.0) {
            return Err(field(&p("weight_fraction"), "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the fields only `method` reads.
    pub fn validate_for(&self, method: Method, prefix: &str) -> Result<()> {
        self.validate(prefix)?;
        let p = |f: &str| format!("{prefix}{f}");
        match method {
            Method::Pcdarts if self.pcdarts_warmstart >= self.epochs => Err(field(
                &p("pcdarts_warmstart"),
                format!("must be below epochs ({})", self.epochs),
            )),
            Method::Drnas => {
                let [s1, s2] = self.drnas_stages();
                if self.drnas_warmstart >= s1.min(s2) {
                    return Err(field(
                        &p("drnas_warmstart"),
                        format!("must be below the stage length ({})", s1.min(s2)),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Settings of final (discrete-network) training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyperparams {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        TrainHyperparams {
            epochs: 100,
            batch: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 3e-4,
            label_smoothing: 0.0,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let p = |f: &str| format!("{prefix}{f}");
        if self.epochs == 0 {
            return Err(field(&p("epochs"), "must be at least 1"));
        }
        if self.batch < 2 {
            return Err(field(&p("batch"), "need at least 2 examples per batch"));
        }
        positive(&p("lr"), self.lr)?;
        unit(&p("momentum"), self.momentum)?;
        if self.weight_decay < 0.0 {
            return Err(field(&p("weight_decay"), "must be non-negative"));
        }
        unit(&p("label_smoothing"), self.label_smoothing)
    }
}

/// Number of mini-batches per epoch over `n` examples (incomplete last batch dropped).
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    (n / batch).max(1)
}
