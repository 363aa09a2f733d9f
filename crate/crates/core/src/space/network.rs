//! The shared backbone, the multi-head supernetwork, and standalone discrete networks.

use serde::{Deserialize, Serialize};

use super::genotype::{BackboneSpec, GenotypeSpec, MultiHeadGenotype};
use super::modules::{
    edge_combination, CandidateOp, MixedOp, NetBuilder, Norm, NormStyle, OpNoise, ReluConvNorm,
};
use super::ops::{CellTopology, OpKind};
use super::params::{Ctx, ParamId, ParamStore, RunningStats};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Tensor, Var};

/// Shape of a multi-head network and its candidate op set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub classes: usize,
    pub backbone: BackboneSpec,
    #[serde(rename = "M")]
    pub heads: usize,
    #[serde(rename = "L")]
    pub cells: usize,
    pub nodes: usize,
    pub head_width: usize,
    pub ops: Vec<OpKind>,
    #[serde(default)]
    pub op_noise: Option<OpNoise>,
}

impl ModelSpec {
    pub fn genotype_spec(&self) -> GenotypeSpec {
        GenotypeSpec {
            heads: self.heads,
            cells: self.cells,
            nodes: self.nodes,
            head_width: self.head_width,
            ops: self.ops.clone(),
        }
    }

    pub fn topology(&self) -> CellTopology {
        CellTopology::new(self.nodes)
    }

    /// Spec matching a genotype, keeping data-dependent fields from `self`.
    pub fn for_genotype(&self, g: &MultiHeadGenotype) -> ModelSpec {
        ModelSpec {
            backbone: g.backbone,
            heads: g.spec.heads,
            cells: g.spec.cells,
            nodes: g.spec.nodes,
            head_width: g.spec.head_width,
            ops: g.spec.ops.clone(),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("model_spec", msg.to_string()));
        if self.in_channels == 0 || self.classes < 2 {
            return bad("need at least one input channel and two classes");
        }
        if self.backbone.width == 0 || self.head_width == 0 {
            return bad("widths must be positive");
        }
        if self.heads == 0 || self.cells == 0 || self.nodes == 0 {
            return bad("M, L and nodes must be positive");
        }
        if self.ops.is_empty() {
            return bad("empty op set");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ParamId,
    norm1: Norm,
    conv2: ParamId,
    norm2: Norm,
    shortcut: ReluConvNorm,
}

impl ResBlock {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s2 = ConvParams {
            stride: 2,
            padding: 1,
            ..Default::default()
        };
        let s1 = ConvParams {
            padding: 1,
            ..Default::default()
        };
        let h = ctx.tape.relu(x);
        let w = ctx.param(self.conv1);
        let h = ctx.tape.conv2d(h, w, s2)?;
        let h = self.norm1.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let w = ctx.param(self.conv2);
        let h = ctx.tape.conv2d(h, w, s1)?;
        let h = self.norm2.forward(ctx, h)?;
        let s = self.shortcut.forward(ctx, x)?;
        ctx.tape.add(h, s)
    }
}

/// Stem `3x3` conv + norm, then residual stages that each halve the resolution.
#[derive(Clone, Debug)]
pub struct Backbone {
    stem: ParamId,
    stem_norm: Norm,
    blocks: Vec<ResBlock>,
}

impl Backbone {
    fn build(b: &mut NetBuilder, in_channels: usize, spec: BackboneSpec) -> Self {
        let c = spec.width;
        let stem = b.conv("backbone.stem.conv", c, in_channels, 3);
        let stem_norm = b.norm("backbone.stem.norm", c);
        let blocks = (0..spec.layers)
            .map(|i| {
                let name = format!("backbone.stage{i}");
                ResBlock {
                    conv1: b.conv(&format!("{name}.conv1"), c, c, 3),
                    norm1: b.norm(&format!("{name}.norm1"), c),
                    conv2: b.conv(&format!("{name}.conv2"), c, c, 3),
                    norm2: b.norm(&format!("{name}.norm2"), c),
                    shortcut: ReluConvNorm::build(b, &format!("{name}.shortcut"), c, c, 1, 2),
                }
            })
            .collect();
        Backbone {
            stem,
            stem_norm,
            blocks,
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.stem);
        let p = ConvParams {
            padding: 1,
            ..Default::default()
        };
        let mut h = ctx.tape.conv2d(x, w, p)?;
        h = self.stem_norm.forward(ctx, h)?;
        for blk in &self.blocks {
            h = blk.forward(ctx, h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct Classifier {
    w: ParamId,
    b: ParamId,
}

impl Classifier {
    fn build(b: &mut NetBuilder, name: &str, inputs: usize, classes: usize) -> Self {
        let (w, b) = b.linear(&format!("{name}.classifier"), inputs, classes);
        Classifier { w, b }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let f = ctx.tape.spatial_mean(x)?;
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        let z = ctx.tape.matmul(f, w)?;
        let z = ctx.tape.add_row_bias(z, b)?;
        ctx.tape.softmax(z, 1)
    }
}

fn cell_name(h: usize, c: usize) -> String {
    format!("head{h}.cell{c}")
}

fn build_pre(b: &mut NetBuilder, name: &str, cin: usize, width: usize) -> [ReluConvNorm; 2] {
    [
        ReluConvNorm::build(b, &format!("{name}.pre0"), cin, width, 1, 1),
        ReluConvNorm::build(b, &format!("{name}.pre1"), cin, width, 1, 1),
    ]
}

fn cell_input(c: usize, spec: &ModelSpec) -> usize {
    if c == 0 {
        spec.backbone.width
    } else {
        spec.nodes * spec.head_width
    }
}

fn edge_stride(cell: usize, from: usize) -> usize {
    if cell == 0 && from < CellTopology::INPUTS {
        2
    } else {
        1
    }
}

#[derive(Clone, Debug)]
struct SuperCell {
    pre: [ReluConvNorm; 2],
    edges: Vec<MixedOp>,
}

#[derive(Clone, Debug)]
struct SuperHead {
    cells: Vec<SuperCell>,
    classifier: Classifier,
}

/// How a supernetwork forward pass treats the architecture.
pub enum ArchView<'a> {
    /// Mixed ops weighted by per-head `[edges, ops]` matrices, optionally with
    /// per-head edge weights `[edges]` softmax-normalized over each node's inputs.
    Continuous {
        op_weights: &'a [Var],
        edge_weights: Option<&'a [Var]>,
    },
    /// Only the genotype's edges, each with its single op at unit weight.
    Discrete(&'a MultiHeadGenotype),
}

/// Backbone plus `M` heads of mixed-op cells.
#[derive(Clone, Debug)]
pub struct Supernet {
    pub spec: ModelSpec,
    pub partial: Option<usize>,
    pub head_ops: Vec<Vec<OpKind>>,
    pub store: ParamStore,
    backbone: Backbone,
    heads: Vec<SuperHead>,
}

impl Supernet {
    /// Every head uses the spec's op set.
    pub fn new(spec: &ModelSpec, partial: Option<usize>, seed: u64) -> Result<Self> {
        Self::with_head_ops(spec, vec![spec.ops.clone(); spec.heads], partial, seed)
    }

    pub fn with_head_ops(
        spec: &ModelSpec,
        head_ops: Vec<Vec<OpKind>>,
        partial: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if head_ops.len() != spec.heads || head_ops.iter().any(Vec::is_empty) {
            return Err(Error::invalid(
                "supernet",
                format!(
                    "need {} non-empty op sets, got {}",
                    spec.heads,
                    head_ops.len()
                ),
            ));
        }
        let mut b = NetBuilder::new(NormStyle::SEARCH, seed);
        let backbone = Backbone::build(&mut b, spec.in_channels, spec.backbone);
        let topo = spec.topology();
        let mut heads = Vec::with_capacity(spec.heads);
        for (h, ops) in head_ops.iter().enumerate() {
            let mut cells = Vec::with_capacity(spec.cells);
            for c in 0..spec.cells {
                let name = cell_name(h, c);
                let pre = build_pre(&mut b, &name, cell_input(c, spec), spec.head_width);
                let edges = topo
                    .edges()
                    .into_iter()
                    .enumerate()
                    .map(|(e, (from, _))| {
                        MixedOp::build(
                            &mut b,
                            &format!("{name}.edge{e}"),
                            ops,
                            spec.head_width,
                            edge_stride(c, from),
                            partial,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                cells.push(SuperCell { pre, edges });
            }
            let classifier = Classifier::build(
                &mut b,
                &format!("head{h}"),
                spec.nodes * spec.head_width,
                spec.classes,
            );
            heads.push(SuperHead { cells, classifier });
        }
        Ok(Supernet {
            spec: spec.clone(),
            partial,
            head_ops,
            store: b.store,
            backbone,
            heads,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Per-head class probabilities `[batch, classes]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, view: &ArchView) -> Result<Vec<Var>> {
        let m = self.heads.len();
        match view {
            ArchView::Continuous {
                op_weights,
                edge_weights,
            } => {
                if op_weights.len() != m || edge_weights.is_some_and(|b| b.len() != m) {
                    return Err(Error::invalid(
                        "supernet_forward",
                        format!("architecture weights must cover {m} heads"),
                    ));
                }
            }
            ArchView::Discrete(g) => {
                if g.heads.len() != m || g.spec.nodes != self.spec.nodes {
                    return Err(Error::SpecMismatch(format!(
                        "genotype with {} heads / {} nodes on a {m}-head, {}-node supernet",
                        g.heads.len(),
                        g.spec.nodes,
                        self.spec.nodes
                    )));
                }
            }
        }
        let feat = self.backbone.forward(ctx, x)?;
        let noise = self.spec.op_noise;
        let topo = self.spec.topology();
        let mut out = Vec::with_capacity(m);
        for (h, head) in self.heads.iter().enumerate() {
            let mut s = feat;
            for cell in &head.cells {
                let mut states = vec![cell.pre[0].forward(ctx, s)?, cell.pre[1].forward(ctx, s)?];
                for to in CellTopology::INPUTS..topo.nodes + CellTopology::INPUTS {
                    let node = match view {
                        ArchView::Continuous {
                            op_weights,
                            edge_weights,
                        } => {
                            let first = topo.first_edge(to);
                            let outs = (0..to)
                                .map(|from| {
                                    cell.edges[first + from].forward(
                                        ctx,
                                        states[from],
                                        op_weights[h],
                                        first + from,
                                        noise,
                                    )
                                })
                                .collect::<Result<Vec<_>>>()?;
                            match edge_weights {
                                Some(b) => edge_combination(ctx, &outs, b[h], first)?,
                                None => ctx.tape.add_n(&outs)?,
                            }
                        }
                        ArchView::Discrete(g) => {
                            let gene = &g.heads[h][to - CellTopology::INPUTS];
                            let mut outs = [states[0]; 2];
                            for k in 0..2 {
                                let from = gene.inputs[k];
                                let e = topo.edge_index(from, to);
                                let idx = self.head_ops[h]
                                    .iter()
                                    .position(|&o| o == gene.ops[k])
                                    .ok_or_else(|| {
                                    Error::InvalidGenotype(format!(
                                        "head {h}: {} not in this supernet's op set",
                                        gene.ops[k]
                                    ))
                                })?;
                                outs[k] =
                                    cell.edges[e].forward_single(ctx, states[from], idx, noise)?;
                            }
                            ctx.tape.add(outs[0], outs[1])?
                        }
                    };
                    states.push(node);
                }
                s = ctx.tape.concat(&states[CellTopology::INPUTS..], 1)?;
            }
            out.push(head.classifier.forward(ctx, s)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
struct DiscreteCell {
    pre: [ReluConvNorm; 2],
    /// Per intermediate node: the two (input state, op) pairs.
    nodes: Vec<[(usize, OpKind, CandidateOp); 2]>,
}

#[derive(Clone, Debug)]
struct DiscreteHead {
    cells: Vec<DiscreteCell>,
    classifier: Classifier,
}

/// A standalone network built from a genotype.
#[derive(Clone, Debug)]
pub struct DiscreteNet {
    pub spec: ModelSpec,
    pub genotype: MultiHeadGenotype,
    pub style: NormStyle,
    pub store: ParamStore,
    pub running: Vec<RunningStats>,
    backbone: Backbone,
    heads: Vec<DiscreteHead>,
}

impl DiscreteNet {
    /// `spec` supplies input channels, classes and op noise; shapes come from the genotype.
    pub fn new(
        spec: &ModelSpec,
        genotype: &MultiHeadGenotype,
        style: NormStyle,
        seed: u64,
    ) -> Result<Self> {
        genotype.validate()?;
        let spec = spec.for_genotype(genotype);
        spec.validate()?;
        let topo = spec.topology();
        let mut b = NetBuilder::new(style, seed);
        let backbone = Backbone::build(&mut b, spec.in_channels, spec.backbone);
        let mut heads = Vec::with_capacity(spec.heads);
        for (h, genes) in genotype.heads.iter().enumerate() {
            let mut cells = Vec::with_capacity(spec.cells);
            for c in 0..spec.cells {
                let name = cell_name(h, c);
                let pre = build_pre(&mut b, &name, cell_input(c, &spec), spec.head_width);
                let nodes = genes
                    .iter()
                    .map(|g| {
                        [0, 1].map(|k| {
                            let from = g.inputs[k];
                            let e = topo.edge_index(from, g.node);
                            let op = CandidateOp::build(
                                &mut b,
                                g.ops[k],
                                &format!("{name}.edge{e}"),
                                spec.head_width,
                                edge_stride(c, from),
                            );
                            (from, g.ops[k], op)
                        })
                    })
                    .collect();
                cells.push(DiscreteCell { pre, nodes });
            }
            let classifier = Classifier::build(
                &mut b,
                &format!("head{h}"),
                spec.nodes * spec.head_width,
                spec.classes,
            );
            heads.push(DiscreteHead { cells, classifier });
        }
        Ok(DiscreteNet {
            spec,
            genotype: genotype.clone(),
            style,
            store: b.store,
            running: b.running,
            backbone,
            heads,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Vec<Var>> {
        let feat = self.backbone.forward(ctx, x)?;
        let noise = self.spec.op_noise;
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut s = feat;
            for cell in &head.cells {
                let mut states = vec![cell.pre[0].forward(ctx, s)?, cell.pre[1].forward(ctx, s)?];
                for pair in &cell.nodes {
                    let mut outs = [states[0]; 2];
                    for (k, (from, kind, op)) in pair.iter().enumerate() {
                        let y = op.forward(ctx, states[*from])?;
                        outs[k] = super::modules::inject_noise(ctx, y, *kind, noise)?;
                    }
                    let node = ctx.tape.add(outs[0], outs[1])?;
                    states.push(node);
                }
                s = ctx.tape.concat(&states[CellTopology::INPUTS..], 1)?;
            }
            out.push(head.classifier.forward(ctx, s)?);
        }
        Ok(out)
    }

    /// Folds batch statistics recorded during a training forward pass into the running averages.
    pub fn update_running(&mut self, recorded: &[(usize, Vec<f64>, Vec<f64>)]) {
        for (i, mean, var) in recorded {
            self.running[*i].update(mean, var);
        }
    }
}

/// Convenience: forwards a constant batch and returns the head probabilities as values.
pub fn head_probabilities(probs: &[Var], ctx: &Ctx) -> Vec<Tensor> {
    probs.iter().map(|&p| ctx.tape.value(p).clone()).collect()
}
