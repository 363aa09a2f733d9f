use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::genotype::{BackboneSpec, GenotypeSpec, MultiHeadGenotype, NodeGene};
use super::ops::{CellTopology, OpKind};
use crate::error::{Error, Result};

/// How the continuous architecture state is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    /// Softmax of `alpha` mixes the ops on an edge.
    Darts,
    /// As `Darts`, plus per-edge weights `beta` normalized over each node's inputs.
    PcDarts,
    /// `alpha` holds Dirichlet concentrations over the ops of each edge.
    DrNas,
}

pub const CONCENTRATION_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadArch {
    pub ops: Vec<OpKind>,
    /// Row-major `[edges, ops]`.
    pub alpha: Vec<f64>,
    /// One entry per edge in `PcDarts` mode, empty otherwise.
    pub beta: Vec<f64>,
}

impl HeadArch {
    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn edge_alpha(&self, edge: usize) -> &[f64] {
        let n = self.ops.len();
        &self.alpha[edge * n..(edge + 1) * n]
    }
}

/// Continuous architecture state: one independent configuration per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub mode: ArchMode,
    pub nodes: usize,
    pub heads: Vec<HeadArch>,
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

impl ArchParams {
    /// Initial state: `alpha ~ 1e-3 N(0,1)` (concentrations `1 + 1e-3 N(0,1)` in
    /// `DrNas` mode) and `beta ~ 1e-3 N(0,1)`.
    pub fn init<R: Rng + ?Sized>(
        mode: ArchMode,
        nodes: usize,
        head_ops: &[Vec<OpKind>],
        rng: &mut R,
    ) -> Self {
        let edges = CellTopology::new(nodes).num_edges();
        let mut noise = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| 1e-3 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let heads = head_ops
            .iter()
            .map(|ops| {
                let mut alpha = noise(edges * ops.len());
                if mode == ArchMode::DrNas {
                    alpha
                        .iter_mut()
                        .for_each(|a| *a = (1.0 + *a).max(CONCENTRATION_FLOOR));
                }
                let beta = if mode == ArchMode::PcDarts {
                    noise(edges)
                } else {
                    Vec::new()
                };
                HeadArch {
                    ops: ops.clone(),
                    alpha,
                    beta,
                }
            })
            .collect();
        ArchParams { mode, nodes, heads }
    }

    pub fn topology(&self) -> CellTopology {
        CellTopology::new(self.nodes)
    }

    pub fn num_edges(&self) -> usize {
        self.topology().num_edges()
    }

    pub fn len(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.alpha.len() + h.beta.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values, head by head, `alpha` then `beta`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for h in &self.heads {
            out.extend_from_slice(&h.alpha);
            out.extend_from_slice(&h.beta);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::invalid(
                "ArchParams::set_flat",
                format!("expected {} values, got {}", self.len(), values.len()),
            ));
        }
        let mut off = 0;
        for h in &mut self.heads {
            let na = h.alpha.len();
            h.alpha.copy_from_slice(&values[off..off + na]);
            off += na;
            let nb = h.beta.len();
            h.beta.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Applies the concentration floor in `DrNas` mode.
    pub fn clamp(&mut self) {
        if self.mode == ArchMode::DrNas {
            for h in &mut self.heads {
                h.alpha
                    .iter_mut()
                    .for_each(|a| *a = a.max(CONCENTRATION_FLOOR));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// Per-edge op strengths: softmax of `alpha`, or the Dirichlet mean in `DrNas` mode.
    pub fn op_strengths(&self, head: usize) -> Vec<Vec<f64>> {
        let h = &self.heads[head];
        (0..self.num_edges())
            .map(|e| {
                let a = h.edge_alpha(e);
                match self.mode {
                    ArchMode::DrNas => {
                        let total: f64 = a.iter().sum();
                        a.iter().map(|v| v / total).collect()
                    }
                    _ => softmax(a),
                }
            })
            .collect()
    }

    /// Per-edge connection weights: softmax of `beta` over each node's inputs
    /// in `PcDarts` mode, 1 otherwise.
    pub fn edge_weights(&self, head: usize) -> Vec<f64> {
        let topo = self.topology();
        let h = &self.heads[head];
        if self.mode != ArchMode::PcDarts {
            return vec![1.0; topo.num_edges()];
        }
        let mut out = Vec::with_capacity(topo.num_edges());
        for to in CellTopology::INPUTS..self.nodes + CellTopology::INPUTS {
            let start = topo.first_edge(to);
            out.extend(softmax(&h.beta[start..start + to]));
        }
        out
    }

    /// Keeps the two strongest incoming edges per node, each with its
    /// strongest op. Edge strength is `max_o strength * edge weight`; ties go
    /// to the lower edge index, then the lower op index.
    pub fn discretize(
        &self,
        cells: usize,
        head_width: usize,
        backbone: BackboneSpec,
    ) -> MultiHeadGenotype {
        let topo = self.topology();
        let mut all_ops: Vec<OpKind> = Vec::new();
        for h in &self.heads {
            for &o in &h.ops {
                if !all_ops.contains(&o) {
                    all_ops.push(o);
                }
            }
        }
        all_ops.sort();
        let heads = (0..self.heads.len())
            .map(|hi| {
                let strengths = self.op_strengths(hi);
                let ew = self.edge_weights(hi);
                let ops = &self.heads[hi].ops;
                (CellTopology::INPUTS..self.nodes + CellTopology::INPUTS)
                    .map(|to| {
                        let mut cands: Vec<(usize, f64, usize)> = (0..to)
                            .map(|from| {
                                let e = topo.edge_index(from, to);
                                let best = argmax(&strengths[e]);
                                (from, strengths[e][best] * ew[e], best)
                            })
                            .collect();
                        // stable sort keeps lower edge index first among equals
                        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
                        let (a, b) = (cands[0], cands[1]);
                        NodeGene::new(to, (a.0, ops[a.2]), (b.0, ops[b.2]))
                    })
                    .collect()
            })
            .collect();
        MultiHeadGenotype {
            spec: GenotypeSpec {
                heads: self.heads.len(),
                cells,
                nodes: self.nodes,
                head_width,
                ops: all_ops,
            },
            heads,
            backbone,
        }
    }

    /// One-hot embedding of a genotype: retained edges get `+margin` on their
    /// op and `-margin` elsewhere; other edges stay at zero. In `DrNas` mode the
    /// chosen concentration is `exp(margin)` and the rest are 1.
    pub fn one_hot(genotype: &MultiHeadGenotype, mode: ArchMode, margin: f64) -> Result<Self> {
        genotype.validate()?;
        let nodes = genotype.spec.nodes;
        let topo = CellTopology::new(nodes);
        let ops = genotype.spec.ops.clone();
        let n = ops.len();
        let (base, on, off) = match mode {
            ArchMode::DrNas => (1.0, margin.exp(), 1.0),
            _ => (0.0, margin, -margin),
        };
        let heads = genotype
            .heads
            .iter()
            .map(|cell| {
                let mut alpha = vec![base; topo.num_edges() * n];
                let mut beta = if mode == ArchMode::PcDarts {
                    vec![0.0; topo.num_edges()]
                } else {
                    Vec::new()
                };
                for gene in cell {
                    for s in 0..2 {
                        let e = topo.edge_index(gene.inputs[s], gene.node);
                        let oi = ops
                            .iter()
                            .position(|&o| o == gene.ops[s])
                            .expect("validated");
                        for (j, a) in alpha[e * n..(e + 1) * n].iter_mut().enumerate() {
                            *a = if j == oi { on } else { off };
                        }
                        if let Some(b) = beta.get_mut(e) {
                            *b = margin;
                        }
                    }
                }
                HeadArch {
                    ops: ops.clone(),
                    alpha,
                    beta,
                }
            })
            .collect();
        Ok(ArchParams { mode, nodes, heads })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::space::genotype::sample_random_genotype;

    const BB: BackboneSpec = BackboneSpec {
        layers: 2,
        width: 8,
    };

    fn spread(top: f64, n: usize) -> Vec<f64> {
        let rest = (1.0 - top) / (n - 1) as f64;
        (0..n).map(|i| if i == 0 { top } else { rest }).collect()
    }

    #[test]
    fn discretize_hand_ranked_node() {
        // node 3 of a 2-node cell has candidate inputs 0, 1, 2 with max op
        // strengths 0.5 / 0.3 / 0.2, so the first two edges are kept.
        let mut arch = ArchParams::init(
            ArchMode::Darts,
            2,
            &[OpKind::ALL.to_vec()],
            &mut rand::rng(),
        );
        let topo = arch.topology();
        for (from, top) in [(0usize, 0.5), (1, 0.3), (2, 0.2)] {
            let e = topo.edge_index(from, 3);
            let logits: Vec<f64> = spread(top, 7).iter().map(|p| p.ln()).collect();
            arch.heads[0].alpha[e * 7..(e + 1) * 7].copy_from_slice(&logits);
        }
        let g = arch.discretize(1, 4, BB);
        assert_eq!(g.heads[0][1].inputs, [0, 1]);
        assert_eq!(g.heads[0][1].ops, [OpKind::SkipConnect; 2]);

        // the same ranking through Dirichlet means
        let mut arch = ArchParams::init(
            ArchMode::DrNas,
            2,
            &[OpKind::ALL.to_vec()],
            &mut rand::rng(),
        );
        for (from, top) in [(0usize, 0.2), (1, 0.5), (2, 0.3)] {
            let e = topo.edge_index(from, 3);
            let conc: Vec<f64> = spread(top, 7).iter().map(|p| 10.0 * p).collect();
            arch.heads[0].alpha[e * 7..(e + 1) * 7].copy_from_slice(&conc);
        }
        let g = arch.discretize(1, 4, BB);
        assert_eq!(g.heads[0][1].inputs, [1, 2]);
    }

    #[test]
    fn exact_ties_select_lowest_indices() {
        for mode in [ArchMode::Darts, ArchMode::PcDarts, ArchMode::DrNas] {
            let mut arch =
                ArchParams::init(mode, 4, &vec![OpKind::ALL.to_vec(); 2], &mut rand::rng());
            let fill = if mode == ArchMode::DrNas { 1.0 } else { 0.0 };
            for h in &mut arch.heads {
                h.alpha.iter_mut().for_each(|a| *a = fill);
                h.beta.iter_mut().for_each(|b| *b = 0.0);
            }
            let g = arch.discretize(3, 8, BB);
            for cell in &g.heads {
                for gene in cell {
                    assert_eq!(gene.inputs, [0, 1]);
                    assert_eq!(gene.ops, [OpKind::SkipConnect; 2]);
                }
            }
            assert_eq!(g, arch.discretize(3, 8, BB));
        }
    }

    #[test]
    fn pcdarts_beta_changes_ranking() {
        let ops = vec![OpKind::SkipConnect, OpKind::AvgPool3x3];
        let mut arch = ArchParams::init(ArchMode::PcDarts, 2, &[ops], &mut rand::rng());
        arch.heads[0].alpha.iter_mut().for_each(|a| *a = 0.0);
        arch.heads[0].beta.iter_mut().for_each(|b| *b = 0.0);
        let topo = arch.topology();
        arch.heads[0].beta[topo.edge_index(2, 3)] = 3.0;
        arch.heads[0].beta[topo.edge_index(1, 3)] = 1.0;
        let g = arch.discretize(1, 4, BB);
        assert_eq!(g.heads[0][1].inputs, [1, 2]);
    }

    #[test]
    fn flatten_round_trip_and_length_check() {
        let mut arch = ArchParams::init(
            ArchMode::PcDarts,
            4,
            &vec![OpKind::ALL.to_vec(); 3],
            &mut rand::rng(),
        );
        assert_eq!(arch.len(), 3 * (14 * 7 + 14));
        let flat = arch.flatten();
        let mut other = arch.clone();
        other
            .heads
            .iter_mut()
            .for_each(|h| h.alpha.iter_mut().for_each(|a| *a = 9.0));
        other.set_flat(&flat).unwrap();
        assert_eq!(other, arch);
        assert!(arch.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn concentrations_are_floored() {
        let mut arch = ArchParams::init(
            ArchMode::DrNas,
            4,
            &[OpKind::ALL.to_vec()],
            &mut rand::rng(),
        );
        arch.heads[0].alpha[3] = -5.0;
        arch.clamp();
        assert_eq!(arch.heads[0].alpha[3], CONCENTRATION_FLOOR);
        assert!(arch.heads[0].alpha.iter().all(|&a| a > 0.0));
    }

    proptest! {
        #[test]
        fn one_hot_then_discretize_is_identity(seed in any::<u64>(), m in 1usize..4, mode_i in 0usize..3) {
            let mode = [ArchMode::Darts, ArchMode::PcDarts, ArchMode::DrNas][mode_i];
            let spec = GenotypeSpec { heads: m, cells: 3, nodes: 4, head_width: 8, ops: OpKind::ALL.to_vec() };
            let g = sample_random_genotype(seed, &spec, BB);
            let arch = ArchParams::one_hot(&g, mode, 40.0).unwrap();
            prop_assert_eq!(arch.discretize(3, 8, BB), g);
        }
    }
}
