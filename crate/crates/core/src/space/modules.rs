//! Building blocks shared by the supernetwork and the discrete networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::OpKind;
use super::params::{Ctx, NormMode, ParamId, ParamStore, RunningStats};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, PoolKind, PoolParams, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Additive Gaussian noise on the output of every op except `clean`.
///
/// Used to build tasks with a known best operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNoise {
    pub std: f64,
    pub clean: OpKind,
}

/// Normalization layer configuration of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormStyle {
    pub affine: bool,
    pub running: bool,
}

impl NormStyle {
    /// Affine-free batch statistics, as used while searching.
    pub const SEARCH: NormStyle = NormStyle {
        affine: false,
        running: false,
    };
    /// Learnable affine and running statistics for final training.
    pub const FINAL: NormStyle = NormStyle {
        affine: true,
        running: true,
    };
}

/// Allocates parameters (He fan-in initialization) and running statistics.
pub struct NetBuilder {
    pub store: ParamStore,
    pub running: Vec<RunningStats>,
    pub style: NormStyle,
    rng: ChaCha8Rng,
}

impl NetBuilder {
    pub fn new(style: NormStyle, seed: u64) -> Self {
        NetBuilder {
            store: ParamStore::new(),
            running: Vec::new(),
            style,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv(&mut self, name: &str, out: usize, in_per_group: usize, k: usize) -> ParamId {
        let fan_in = (in_per_group * k * k) as f64;
        let w = Tensor::randn(
            &[out, in_per_group, k, k],
            (2.0 / fan_in).sqrt(),
            &mut self.rng,
        );
        self.store.add(name, w)
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> (ParamId, ParamId) {
        let w = Tensor::randn(
            &[inputs, outputs],
            (1.0 / inputs as f64).sqrt(),
            &mut self.rng,
        );
        let w = self.store.add(format!("{name}.weight"), w);
        let b = self
            .store
            .add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        (w, b)
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let affine = self.style.affine.then(|| {
            (
                self.store
                    .add(format!("{name}.gamma"), Tensor::ones(&[channels])),
                self.store
                    .add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            )
        });
        let running = self.style.running.then(|| {
            self.running.push(RunningStats::new(channels));
            self.running.len() - 1
        });
        Norm { affine, running }
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    affine: Option<(ParamId, ParamId)>,
    running: Option<usize>,
}

impl Norm {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = match (ctx.norm, self.running) {
            (NormMode::Running(stats), Some(r)) => {
                let s = &stats[r];
                let inv: Vec<f64> = s.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                let shift: Vec<f64> = s.mean.iter().zip(&inv).map(|(m, i)| -m * i).collect();
                let c = inv.len();
                let sc = ctx.tape.constant(Tensor::new(vec![c], inv)?);
                let sh = ctx.tape.constant(Tensor::new(vec![c], shift)?);
                ctx.tape.channel_affine(x, sc, sh)?
            }
            (NormMode::BatchRecord, Some(r)) => {
                let t = ctx.tape.value(x);
                let (mean, var) = crate::tensor::channel_moments(t.shape(), t.data());
                ctx.recorded.push((r, mean, var));
                ctx.tape.normalize(x, NORM_EPS)?
            }
            _ => ctx.tape.normalize(x, NORM_EPS)?,
        };
        match self.affine {
            Some((g, b)) => {
                let (g, b) = (ctx.param(g), ctx.param(b));
                ctx.tape.channel_affine(y, g, b)
            }
            None => Ok(y),
        }
    }
}

/// ReLU -> conv -> norm.
#[derive(Clone, Debug)]
pub struct ReluConvNorm {
    conv: ParamId,
    p: ConvParams,
    norm: Norm,
}

impl ReluConvNorm {
    pub fn build(
        b: &mut NetBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        ReluConvNorm {
            conv: b.conv(&format!("{name}.conv"), cout, cin, k),
            p: ConvParams {
                stride,
                padding: k / 2,
                ..Default::default()
            },
            norm: b.norm(&format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = ctx.tape.relu(x);
        let w = ctx.param(self.conv);
        let h = ctx.tape.conv2d(h, w, self.p)?;
        self.norm.forward(ctx, h)
    }
}

/// Depthwise `k x k` (optionally dilated) followed by pointwise `1 x 1`.
#[derive(Clone, Debug)]
struct DwPw {
    dw: ParamId,
    pw: ParamId,
    p: ConvParams,
}

impl DwPw {
    fn build(
        b: &mut NetBuilder,
        name: &str,
        c: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        DwPw {
            dw: b.conv(&format!("{name}.dw"), c, 1, k),
            pw: b.conv(&format!("{name}.pw"), c, c, 1),
            p: ConvParams {
                stride,
                padding: dilation * (k / 2),
                dilation,
                groups: c,
            },
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let dw = ctx.param(self.dw);
        let h = ctx.tape.conv2d(x, dw, self.p)?;
        let pw = ctx.param(self.pw);
        ctx.tape.conv2d(h, pw, ConvParams::default())
    }
}

/// A concrete candidate operation with its parameters.
#[derive(Clone, Debug)]
pub enum CandidateOp {
    Identity,
    /// Stride-2 skip connection: ReLU -> 1x1 stride-2 conv -> norm.
    Reduce(ReluConvNorm),
    SepConv {
        first: DwPwNorm,
        second: DwPwNorm,
    },
    DilConv(DwPwNorm),
    Pool {
        kind: PoolKind,
        stride: usize,
        norm: Norm,
    },
}

#[derive(Clone, Debug)]
pub struct DwPwNorm {
    conv: DwPw,
    norm: Norm,
}

impl DwPwNorm {
    fn build(
        b: &mut NetBuilder,
        name: &str,
        c: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        DwPwNorm {
            conv: DwPw::build(b, name, c, k, stride, dilation),
            norm: b.norm(&format!("{name}.norm"), c),
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = ctx.tape.relu(x);
        let h = self.conv.forward(ctx, h)?;
        self.norm.forward(ctx, h)
    }
}

impl CandidateOp {
    pub fn build(b: &mut NetBuilder, kind: OpKind, name: &str, c: usize, stride: usize) -> Self {
        let name = format!("{name}.{}", kind.name());
        match kind {
            OpKind::SkipConnect if stride == 1 => CandidateOp::Identity,
            OpKind::SkipConnect => {
                CandidateOp::Reduce(ReluConvNorm::build(b, &name, c, c, 1, stride))
            }
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if kind == OpKind::SepConv3x3 { 3 } else { 5 };
                CandidateOp::SepConv {
                    first: DwPwNorm::build(b, &format!("{name}.a"), c, k, stride, 1),
                    second: DwPwNorm::build(b, &format!("{name}.b"), c, k, 1, 1),
                }
            }
            OpKind::DilConv3x3 | OpKind::DilConv5x5 => {
                let k = if kind == OpKind::DilConv3x3 { 3 } else { 5 };
                CandidateOp::DilConv(DwPwNorm::build(b, &name, c, k, stride, 2))
            }
            OpKind::MaxPool3x3 | OpKind::AvgPool3x3 => CandidateOp::Pool {
                kind: if kind == OpKind::MaxPool3x3 {
                    PoolKind::Max
                } else {
                    PoolKind::Avg
                },
                stride,
                norm: b.norm(&format!("{name}.norm"), c),
            },
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            CandidateOp::Identity => Ok(x),
            CandidateOp::Reduce(r) => r.forward(ctx, x),
            CandidateOp::SepConv { first, second } => {
                let h = first.forward(ctx, x)?;
                second.forward(ctx, h)
            }
            CandidateOp::DilConv(d) => d.forward(ctx, x),
            CandidateOp::Pool { kind, stride, norm } => {
                let p = PoolParams {
                    window: 3,
                    stride: *stride,
                    padding: 1,
                };
                let h = ctx.tape.pool2d(*kind, x, p)?;
                norm.forward(ctx, h)
            }
        }
    }
}

/// Adds fresh Gaussian noise to `y` when `kind` is not the clean op.
pub(crate) fn inject_noise(
    ctx: &mut Ctx,
    y: Var,
    kind: OpKind,
    noise: Option<OpNoise>,
) -> Result<Var> {
    match noise {
        Some(n) if kind != n.clean && n.std > 0.0 => {
            let shape = ctx.tape.shape(y).to_vec();
            let eps = Tensor::randn(&shape, n.std, &mut ctx.noise);
            let e = ctx.tape.constant(eps);
            ctx.tape.add(y, e)
        }
        _ => Ok(y),
    }
}

/// Channel shuffle permutation: `[g, c/g]` channel blocks are transposed to `[c/g, g]`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Vec<usize> {
    let per = channels / groups;
    let mut perm = vec![0; channels];
    for g in 0..groups {
        for j in 0..per {
            perm[j * groups + g] = g * per + j;
        }
    }
    perm
}

/// All candidate ops of one edge.
///
/// With `partial = Some(k)` only the first `c/k` channels go through the ops;
/// the rest bypass (max-pooled when strided), then channels are shuffled.
#[derive(Clone, Debug)]
pub struct MixedOp {
    pub kinds: Vec<OpKind>,
    ops: Vec<CandidateOp>,
    channels: usize,
    stride: usize,
    partial: Option<usize>,
}

impl MixedOp {
    pub fn build(
        b: &mut NetBuilder,
        name: &str,
        kinds: &[OpKind],
        channels: usize,
        stride: usize,
        partial: Option<usize>,
    ) -> Result<Self> {
        let k = partial.unwrap_or(1);
        if k == 0 || channels % k != 0 {
            return Err(Error::invalid(
                "mixed_op",
                format!("{channels} channels not divisible by partial factor {k}"),
            ));
        }
        let ops = kinds
            .iter()
            .map(|&kind| CandidateOp::build(b, kind, name, channels / k, stride))
            .collect();
        Ok(MixedOp {
            kinds: kinds.to_vec(),
            ops,
            channels,
            stride,
            partial,
        })
    }

    fn split(&self, ctx: &mut Ctx, x: Var) -> Result<(Var, Option<Var>)> {
        match self.partial {
            None => Ok((x, None)),
            Some(k) => {
                let part = self.channels / k;
                let a = ctx.tape.narrow(x, 1, 0, part)?;
                let b = ctx.tape.narrow(x, 1, part, self.channels - part)?;
                Ok((a, Some(b)))
            }
        }
    }

    fn merge(&self, ctx: &mut Ctx, y: Var, bypass: Option<Var>) -> Result<Var> {
        let (Some(b), Some(k)) = (bypass, self.partial) else {
            return Ok(y);
        };
        let b = if self.stride > 1 {
            let p = PoolParams {
                window: 3,
                stride: self.stride,
                padding: 1,
            };
            ctx.tape.pool2d(PoolKind::Max, b, p)?
        } else {
            b
        };
        let cat = ctx.tape.concat(&[y, b], 1)?;
        ctx.tape
            .permute_channels(cat, &shuffle_permutation(self.channels, k))
    }

    /// `sum_o w[row, o] * o(x)` where `weights` is an `[edges, ops]` matrix.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        x: Var,
        weights: Var,
        row: usize,
        noise: Option<OpNoise>,
    ) -> Result<Var> {
        let n = self.ops.len();
        let ws = ctx.tape.shape(weights);
        if ws.last() != Some(&n) {
            return Err(Error::invalid(
                "mixed_op",
                format!("weight shape {ws:?} does not match {n} ops"),
            ));
        }
        let (xa, bypass) = self.split(ctx, x)?;
        let mut terms = Vec::with_capacity(n);
        for (o, (op, &kind)) in self.ops.iter().zip(&self.kinds).enumerate() {
            let y = op.forward(ctx, xa)?;
            let y = inject_noise(ctx, y, kind, noise)?;
            terms.push(ctx.tape.mul_elem(y, weights, row * n + o)?);
        }
        let y = ctx.tape.add_n(&terms)?;
        self.merge(ctx, y, bypass)
    }

    /// Only the op at `index` is active, with unit weight.
    pub fn forward_single(
        &self,
        ctx: &mut Ctx,
        x: Var,
        index: usize,
        noise: Option<OpNoise>,
    ) -> Result<Var> {
        let (xa, bypass) = self.split(ctx, x)?;
        let y = self.ops[index].forward(ctx, xa)?;
        let y = inject_noise(ctx, y, self.kinds[index], noise)?;
        self.merge(ctx, y, bypass)
    }
}

/// `sum_e softmax(beta[start..start+n])_e * outs[e]`.
pub fn edge_combination(ctx: &mut Ctx, outs: &[Var], beta: Var, start: usize) -> Result<Var> {
    let nb = ctx.tape.shape(beta).iter().product::<usize>();
    if start + outs.len() > nb {
        return Err(Error::invalid(
            "edge_combination",
            format!(
                "{} edge outputs but only {} weights from {start}",
                outs.len(),
                nb - start.min(nb)
            ),
        ));
    }
    let b = ctx.tape.narrow(beta, 0, start, outs.len())?;
    let w = ctx.tape.softmax(b, 0)?;
    let terms = outs
        .iter()
        .enumerate()
        .map(|(e, &o)| ctx.tape.mul_elem(o, w, e))
        .collect::<Result<Vec<_>>>()?;
    ctx.tape.add_n(&terms)
}
