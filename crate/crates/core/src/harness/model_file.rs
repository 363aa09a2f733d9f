use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{Ensemble, Member};
use crate::space::{DiscreteNet, ModelSpec, MultiHeadGenotype, NormStyle};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A trained network: everything needed to rebuild it bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub spec: ModelSpec,
    pub genotype: MultiHeadGenotype,
    pub style: NormStyle,
    pub seed: u64,
    pub tag: String,
    pub params: Vec<SavedParam>,
    pub running: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SavedModel {
    pub fn from_member(m: &Member) -> Self {
        let net = &m.net;
        SavedModel {
            spec: net.spec.clone(),
            genotype: net.genotype.clone(),
            style: net.style,
            seed: m.seed,
            tag: m.tag.clone(),
            params: net
                .store
                .names()
                .iter()
                .zip(net.store.values())
                .map(|(n, t)| SavedParam {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            running: net
                .running
                .iter()
                .map(|r| (r.mean.clone(), r.var.clone()))
                .collect(),
        }
    }

    pub fn into_member(self) -> Result<Member> {
        let mut net = DiscreteNet::new(&self.spec, &self.genotype, self.style, 0)?;
        if net.store.len() != self.params.len() || net.running.len() != self.running.len() {
            return Err(Error::invalid(
                "SavedModel",
                "parameter list does not match the genotype",
            ));
        }
        for p in self.params {
            let id = net.store.id(&p.name).ok_or_else(|| {
                Error::invalid("SavedModel", format!("unknown parameter `{}`", p.name))
            })?;
            let t = Tensor::new(p.shape, p.data)?;
            if t.shape() != net.store.get(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "SavedModel",
                    left: net.store.get(id).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *net.store.get_mut(id) = t;
        }
        for (r, (mean, var)) in net.running.iter_mut().zip(self.running) {
            if mean.len() != r.mean.len() || var.len() != r.var.len() {
                return Err(Error::invalid(
                    "SavedModel",
                    "running statistics have the wrong width",
                ));
            }
            r.mean = mean;
            r.var = var;
        }
        Ok(Member {
            net,
            seed: self.seed,
            tag: self.tag,
        })
    }
}

pub fn save_ensemble(e: &Ensemble, path: &Path) -> Result<()> {
    let models: Vec<SavedModel> = e.members.iter().map(SavedModel::from_member).collect();
    fs::write(path, serde_json::to_vec(&models)?).map_err(|err| Error::io(path, err))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).map_err(|err| Error::io(path, err))?;
    let models: Vec<SavedModel> = serde_json::from_slice(&bytes)?;
    if models.is_empty() {
        return Err(Error::invalid("load_ensemble", "file holds no models"));
    }
    Ok(Ensemble {
        members: models
            .into_iter()
            .map(SavedModel::into_member)
            .collect::<Result<_>>()?,
    })
}
