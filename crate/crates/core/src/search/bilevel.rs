use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dirichlet::sample_dirichlet_logits;
use super::hyper::SearchHyperparams;
use super::optim::{Adam, Sgd};
use crate::data::Split;
use crate::error::Result;
use crate::metrics::{arch_val_loss, ensemble_train_loss};
use crate::space::{
    ArchMode, ArchParams, ArchView, Ctx, MultiHeadGenotype, NormMode, Supernet, CONCENTRATION_FLOOR,
};
use crate::tensor::{Tape, Tensor, Var};

/// How DrNAS concentrations become op weights in a forward pass.
pub enum WeightDraw<'r> {
    /// `alpha / sum(alpha)`, deterministic and smooth in `alpha`.
    Expected,
    /// A reparameterized Dirichlet sample.
    Sample(&'r mut ChaCha8Rng),
}

/// Architecture weights recorded on a tape for one forward pass.
pub struct ArchVars {
    pub op_weights: Vec<Var>,
    pub edge_weights: Option<Vec<Var>>,
    leaves: Vec<Var>,
    /// `d leaf / d alpha` elementwise when the leaf is a sampled log-Gamma.
    chain: Option<Vec<Vec<f64>>>,
}

impl ArchVars {
    pub fn new(arch: &ArchParams, tape: &mut Tape, draw: WeightDraw) -> Result<Self> {
        let edges = arch.num_edges();
        let mut op_weights = Vec::with_capacity(arch.heads.len());
        let mut leaves = Vec::with_capacity(arch.heads.len());
        let mut chain = Vec::new();
        let mut rng = match draw {
            WeightDraw::Sample(r) if arch.mode == ArchMode::DrNas => Some(r),
            _ => None,
        };
        for h in &arch.heads {
            let shape = [edges, h.num_ops()];
            let (leaf, w) = match (arch.mode, rng.as_deref_mut()) {
                (ArchMode::DrNas, Some(rng)) => {
                    let mut logits = Vec::with_capacity(h.alpha.len());
                    let mut jac = Vec::with_capacity(h.alpha.len());
                    for e in 0..edges {
                        let (l, j) = sample_dirichlet_logits(h.edge_alpha(e), rng);
                        logits.extend(l);
                        jac.extend(j);
                    }
                    chain.push(jac);
                    let leaf = tape.param(Tensor::from_slice(&shape, &logits)?);
                    (leaf, tape.softmax(leaf, 1)?)
                }
                (ArchMode::DrNas, None) => {
                    let leaf = tape.param(Tensor::from_slice(&shape, &h.alpha)?);
                    let l = tape.ln_clamped(leaf, CONCENTRATION_FLOOR * 1e-3);
                    (leaf, tape.softmax(l, 1)?)
                }
                _ => {
                    let leaf = tape.param(Tensor::from_slice(&shape, &h.alpha)?);
                    (leaf, tape.softmax(leaf, 1)?)
                }
            };
            leaves.push(leaf);
            op_weights.push(w);
        }
        let edge_weights = (arch.mode == ArchMode::PcDarts)
            .then(|| {
                arch.heads
                    .iter()
                    .map(|h| Ok(tape.param(Tensor::from_slice(&[edges], &h.beta)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(ArchVars {
            op_weights,
            edge_weights,
            leaves,
            chain: (!chain.is_empty()).then_some(chain),
        })
    }

    pub fn view(&self) -> ArchView<'_> {
        ArchView::Continuous {
            op_weights: &self.op_weights,
            edge_weights: self.edge_weights.as_deref(),
        }
    }

    /// Gradient with respect to the architecture parameters, in [`ArchParams::flatten`] order.
    pub fn gradient(&self, tape: &Tape) -> Vec<f64> {
        let grad_or_zero = |v: Var| match tape.grad(v) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; tape.value(v).numel()],
        };
        let mut out = Vec::new();
        for (h, &leaf) in self.leaves.iter().enumerate() {
            let mut g = grad_or_zero(leaf);
            if let Some(chain) = &self.chain {
                g.iter_mut().zip(&chain[h]).for_each(|(gi, c)| *gi *= c);
            }
            out.extend(g);
            if let Some(b) = &self.edge_weights {
                out.extend(grad_or_zero(b[h]));
            }
        }
        out
    }
}

/// Losses of one search iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub train: f64,
    pub val: Option<f64>,
}

/// Supernetwork, architecture state and both optimizers of a running search.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub net: Supernet,
    /// `None` for RandomNAS, which has no continuous architecture.
    pub arch: Option<ArchParams>,
    pub w_opt: Sgd,
    pub a_opt: Adam,
    pub rng: ChaCha8Rng,
    pub steps: u64,
}

impl SearchState {
    pub fn new(net: Supernet, arch: Option<ArchParams>, hp: &SearchHyperparams, seed: u64) -> Self {
        SearchState {
            net,
            arch,
            w_opt: Sgd::new(hp.w_momentum, hp.w_weight_decay),
            a_opt: Adam::new(hp.a_beta1, hp.a_beta2, hp.a_weight_decay),
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
        }
    }

    /// Validation objective and its gradient at `arch` with the current weights.
    ///
    /// DrNAS concentrations enter through their expected weights; op noise uses
    /// `noise_seed`. Nothing in `self` changes.
    pub fn arch_loss_grad(
        &self,
        arch: &ArchParams,
        batch: &Split,
        lambda: f64,
        noise_seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut ctx = Ctx::new(&self.net.store, NormMode::Batch).with_noise_seed(noise_seed);
        let av = ArchVars::new(arch, &mut ctx.tape, WeightDraw::Expected)?;
        let x = ctx.input(batch.images.clone());
        let probs = self.net.forward(&mut ctx, x, &av.view())?;
        let loss = arch_val_loss(&mut ctx.tape, &probs, &batch.labels, lambda)?;
        ctx.backward(loss)?;
        Ok((ctx.tape.value(loss).item(), av.gradient(&ctx.tape)))
    }

    /// One Adam step on the architecture using the validation objective (weights fixed).
    pub fn arch_step(&mut self, batch: &Split, lambda: f64, lr: f64) -> Result<f64> {
        let Some(arch) = self.arch.as_mut() else {
            return Err(crate::Error::invalid(
                "arch_step",
                "this search has no architecture parameters",
            ));
        };
        let noise_seed = self.rng.random();
        let mut ctx = Ctx::new(&self.net.store, NormMode::Batch).with_noise_seed(noise_seed);
        let av = ArchVars::new(arch, &mut ctx.tape, WeightDraw::Sample(&mut self.rng))?;
        let x = ctx.input(batch.images.clone());
        let probs = self.net.forward(&mut ctx, x, &av.view())?;
        let loss = arch_val_loss(&mut ctx.tape, &probs, &batch.labels, lambda)?;
        ctx.backward(loss)?;
        let grad = av.gradient(&ctx.tape);
        let value = ctx.tape.value(loss).item();
        let n = grad.len();
        let mut flat = [Tensor::new(vec![n], arch.flatten())?];
        self.a_opt
            .step(&mut flat, &[Some(Tensor::new(vec![n], grad)?)], lr)?;
        arch.set_flat(flat[0].data())?;
        arch.clamp();
        Ok(value)
    }

    /// One SGD step on the weights with the ensemble training loss under the
    /// current (continuous) architecture.
    pub fn weight_step(&mut self, batch: &Split, lr: f64) -> Result<f64> {
        let noise_seed = self.rng.random();
        let (value, grads) = {
            let arch = self
                .arch
                .as_ref()
                .expect("continuous search has an architecture");
            let mut ctx = Ctx::new(&self.net.store, NormMode::Batch).with_noise_seed(noise_seed);
            let av = ArchVars::new(arch, &mut ctx.tape, WeightDraw::Sample(&mut self.rng))?;
            let x = ctx.input(batch.images.clone());
            let probs = self.net.forward(&mut ctx, x, &av.view())?;
            let loss = ensemble_train_loss(&mut ctx.tape, &probs, &batch.labels)?;
            ctx.backward(loss)?;
            (ctx.tape.value(loss).item(), ctx.param_grads())
        };
        self.w_opt.step(self.net.store.values_mut(), &grads, lr)?;
        Ok(value)
    }

    /// One SGD step with only the ops of `g` active.
    pub fn sampled_weight_step(
        &mut self,
        g: &MultiHeadGenotype,
        batch: &Split,
        lr: f64,
    ) -> Result<f64> {
        let noise_seed = self.rng.random();
        let (value, grads) = {
            let mut ctx = Ctx::new(&self.net.store, NormMode::Batch).with_noise_seed(noise_seed);
            let x = ctx.input(batch.images.clone());
            let probs = self.net.forward(&mut ctx, x, &ArchView::Discrete(g))?;
            let loss = ensemble_train_loss(&mut ctx.tape, &probs, &batch.labels)?;
            ctx.backward(loss)?;
            (ctx.tape.value(loss).item(), ctx.param_grads())
        };
        self.w_opt.step(self.net.store.values_mut(), &grads, lr)?;
        Ok(value)
    }
}

/// Architecture step on `val_batch` (skipped when `update_arch` is false),
/// then a weight step on `train_batch`. Counts as one step.
pub fn bilevel_search_step(
    state: &mut SearchState,
    train_batch: &Split,
    val_batch: &Split,
    hp: &SearchHyperparams,
    w_lr: f64,
    update_arch: bool,
) -> Result<StepLoss> {
    let val = if update_arch {
        Some(state.arch_step(val_batch, hp.lambda_jsd, hp.a_lr)?)
    } else {
        None
    };
    let train = state.weight_step(train_batch, w_lr)?;
    state.steps += 1;
    Ok(StepLoss { train, val })
}
