use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_raw, DatasetBundle, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::MAX_SEVERITY;
use crate::search::{Method, SearchHyperparams, TrainHyperparams};
use crate::space::ModelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> usize {
    16
}

fn default_noise() -> f64 {
    0.15
}

impl SyntheticSource {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            size: self.size,
            noise: self.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    /// Dataset file; relative paths resolve against the config file's directory.
    File(PathBuf),
}

impl DatasetSource {
    pub fn load(&self, base: &Path) -> Result<DatasetBundle> {
        match self {
            DatasetSource::Synthetic(s) => gen_synthetic(&s.spec(), s.seed),
            DatasetSource::File(p) => load_raw(&base.join(p)),
        }
    }
}

fn default_pool() -> usize {
    25
}

fn default_severities() -> Vec<usize> {
    (0..=MAX_SEVERITY).collect()
}

/// Everything a `run` needs; the file's bytes determine every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: ModelSpec,
    pub method: Method,
    #[serde(default)]
    pub search: SearchHyperparams,
    #[serde(default)]
    pub train: TrainHyperparams,
    /// Random-search sample count of the baselines.
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_severities")]
    pub severities: Vec<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn field(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates; type errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(
                if path == "." { "<root>" } else { &path },
                e.into_inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text =
            std::str::from_utf8(&bytes).map_err(|e| field("<root>", format!("not UTF-8: {e}")))?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.in_channels == 0 {
            return Err(field("model.in_channels", "must be positive"));
        }
        if m.classes < 2 {
            return Err(field("model.classes", "need at least 2 classes"));
        }
        if m.backbone.width == 0 {
            return Err(field("model.backbone.width", "must be positive"));
        }
        for (name, v) in [
            ("M", m.heads),
            ("L", m.cells),
            ("nodes", m.nodes),
            ("head_width", m.head_width),
        ] {
            if v == 0 {
                return Err(field(&format!("model.{name}"), "must be positive"));
            }
        }
        if m.ops.is_empty() {
            return Err(field("model.ops", "empty op set"));
        }
        for (i, op) in m.ops.iter().enumerate() {
            if m.ops[..i].contains(op) {
                return Err(field(
                    &format!("model.ops[{i}]"),
                    format!("duplicate op `{op}`"),
                ));
            }
        }
        if let Some(n) = m.op_noise {
            if !(n.std >= 0.0 && n.std.is_finite()) {
                return Err(field(
                    "model.op_noise.std",
                    "must be finite and non-negative",
                ));
            }
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            if s.classes < 2 {
                return Err(field(
                    "dataset.synthetic.classes",
                    "need at least 2 classes",
                ));
            }
            if s.size < 8 {
                return Err(field("dataset.synthetic.size", "must be at least 8"));
            }
            for (name, v) in [
                ("n_train", s.n_train),
                ("n_val", s.n_val),
                ("n_test", s.n_test),
            ] {
                if v < s.classes {
                    return Err(field(
                        &format!("dataset.synthetic.{name}"),
                        "need at least one example per class",
                    ));
                }
            }
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return Err(field(
                    "dataset.synthetic.noise",
                    "must be finite and non-negative",
                ));
            }
            if s.classes != m.classes {
                return Err(field(
                    "model.classes",
                    format!("dataset has {} classes", s.classes),
                ));
            }
            if m.in_channels != 1 {
                return Err(field(
                    "model.in_channels",
                    "synthetic images have one channel",
                ));
            }
        }
        if self.method.is_search() {
            self.search.validate_for(self.method, "search.")?;
            if self.method != Method::Randomnas && m.head_width % self.search.partial != 0 {
                return Err(field(
                    "search.partial",
                    format!("must divide model.head_width ({})", m.head_width),
                ));
            }
            if self.method == Method::Drnas && m.head_width % self.search.drnas_stage2_partial != 0
            {
                return Err(field(
                    "search.drnas_stage2_partial",
                    format!("must divide model.head_width ({})", m.head_width),
                ));
            }
        }
        self.train.validate("train.")?;
        if self.pool_size == 0 {
            return Err(field("pool_size", "must be at least 1"));
        }
        if matches!(self.method, Method::NesRs | Method::HyperdeepensRs) && self.pool_size < m.heads
        {
            return Err(field(
                "pool_size",
                format!("forward selection needs at least M = {} models", m.heads),
            ));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "need at least one seed"));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(field(&format!("seeds[{i}]"), format!("duplicate seed {s}")));
            }
        }
        if self.severities.is_empty() {
            return Err(field("severities", "need at least one severity"));
        }
        if let Some(i) = self.severities.iter().position(|&s| s > MAX_SEVERITY) {
            return Err(field(
                &format!("severities[{i}]"),
                format!("must be at most {MAX_SEVERITY}"),
            ));
        }
        Ok(())
    }

    /// Checks the model against a loaded dataset.
    pub fn check_data(&self, data: &DatasetBundle) -> Result<()> {
        if data.classes != self.model.classes {
            return Err(field(
                "model.classes",
                format!("dataset has {} classes", data.classes),
            ));
        }
        let c = data.train.images.shape()[1];
        if c != self.model.in_channels {
            return Err(field(
                "model.in_channels",
                format!("dataset images have {c} channels"),
            ));
        }
        Ok(())
    }
}
