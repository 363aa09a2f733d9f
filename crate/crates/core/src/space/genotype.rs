use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{CellTopology, OpKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Residual stages after the stem; each halves the spatial extent.
    pub layers: usize,
    pub width: usize,
}

/// Shape of the multi-head search space shared by every genotype in it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenotypeSpec {
    #[serde(rename = "M")]
    pub heads: usize,
    #[serde(rename = "L")]
    pub cells: usize,
    pub nodes: usize,
    pub head_width: usize,
    pub ops: Vec<OpKind>,
}

/// The two retained incoming edges of one intermediate node.
///
/// `node` is a state index (`>= 2`); inputs are kept in ascending order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeGene {
    pub node: usize,
    pub inputs: [usize; 2],
    pub ops: [OpKind; 2],
}

impl NodeGene {
    /// Builds a gene in canonical (ascending input) order.
    pub fn new(node: usize, a: (usize, OpKind), b: (usize, OpKind)) -> Self {
        let (a, b) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        NodeGene {
            node,
            inputs: [a.0, b.0],
            ops: [a.1, b.1],
        }
    }
}

pub type CellGenotype = Vec<NodeGene>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiHeadGenotype {
    pub spec: GenotypeSpec,
    pub heads: Vec<CellGenotype>,
    pub backbone: BackboneSpec,
}

impl MultiHeadGenotype {
    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if s.heads == 0 || s.cells == 0 || s.nodes == 0 {
            return Err(Error::InvalidGenotype(
                "M, L and nodes must be positive".into(),
            ));
        }
        if self.heads.len() != s.heads {
            return Err(Error::InvalidGenotype(format!(
                "{} heads listed, spec says {}",
                self.heads.len(),
                s.heads
            )));
        }
        for (h, cell) in self.heads.iter().enumerate() {
            if cell.len() != s.nodes {
                return Err(Error::InvalidGenotype(format!(
                    "head {h}: {} nodes, spec says {}",
                    cell.len(),
                    s.nodes
                )));
            }
            for (i, gene) in cell.iter().enumerate() {
                let node = i + CellTopology::INPUTS;
                if gene.node != node {
                    return Err(Error::InvalidGenotype(format!(
                        "head {h}: node {} listed at position {i}",
                        gene.node
                    )));
                }
                let [a, b] = gene.inputs;
                if a == b || a >= node || b >= node {
                    return Err(Error::InvalidGenotype(format!(
                        "head {h} node {node}: inputs {:?} must be distinct and earlier",
                        gene.inputs
                    )));
                }
                if let Some(op) = gene.ops.iter().find(|o| !s.ops.contains(o)) {
                    return Err(Error::InvalidGenotype(format!(
                        "head {h} node {node}: {op} not in the op set"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// One-head genotype made of head `h`.
    pub fn head(&self, h: usize) -> MultiHeadGenotype {
        MultiHeadGenotype {
            spec: GenotypeSpec {
                heads: 1,
                ..self.spec.clone()
            },
            heads: vec![self.heads[h].clone()],
            backbone: self.backbone,
        }
    }

    /// Categorical edge vector: one `(input, op)` slot per (head, node, input slot).
    pub fn edge_vector(&self) -> Vec<(usize, OpKind)> {
        self.heads
            .iter()
            .flat_map(|cell| {
                cell.iter()
                    .flat_map(|g| [(g.inputs[0], g.ops[0]), (g.inputs[1], g.ops[1])])
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: MultiHeadGenotype = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Number of differing edge-vector slots.
pub fn hamming(a: &MultiHeadGenotype, b: &MultiHeadGenotype) -> Result<usize> {
    if a.spec.heads != b.spec.heads || a.spec.nodes != b.spec.nodes {
        return Err(Error::SpecMismatch(format!(
            "M={} nodes={} vs M={} nodes={}",
            a.spec.heads, a.spec.nodes, b.spec.heads, b.spec.nodes
        )));
    }
    Ok(a.edge_vector()
        .iter()
        .zip(b.edge_vector().iter())
        .filter(|(x, y)| x != y)
        .count())
}

/// Uniform draw from the valid genotypes of `spec`: per node an unordered pair
/// of distinct earlier states, and an independent uniform op per chosen edge.
pub fn sample_random_genotype(
    seed: u64,
    spec: &GenotypeSpec,
    backbone: BackboneSpec,
) -> MultiHeadGenotype {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_genotype_with(&mut rng, spec, backbone)
}

pub fn sample_genotype_with<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &GenotypeSpec,
    backbone: BackboneSpec,
) -> MultiHeadGenotype {
    let heads = (0..spec.heads)
        .map(|_| {
            (0..spec.nodes)
                .map(|i| {
                    let node = i + CellTopology::INPUTS;
                    let pick = index::sample(rng, node, 2);
                    let a = pick.index(0);
                    let b = pick.index(1);
                    let oa = spec.ops[rng.random_range(0..spec.ops.len())];
                    let ob = spec.ops[rng.random_range(0..spec.ops.len())];
                    NodeGene::new(node, (a, oa), (b, ob))
                })
                .collect()
        })
        .collect();
    MultiHeadGenotype {
        spec: spec.clone(),
        heads,
        backbone,
    }
}
