use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hyper::{steps_per_epoch, TrainHyperparams};
use super::methods::{derive_seed, EVAL_CHUNK};
use super::optim::{cosine_lr, Sgd};
use crate::data::{DatasetBundle, Split};
use crate::error::Result;
use crate::metrics::{smoothed_ensemble_loss, MetricReport, PredictionMatrix, ProbMatrix};
use crate::space::{Ctx, DiscreteNet, ModelSpec, MultiHeadGenotype, NormMode, NormStyle};
use crate::tensor::Tensor;

/// A trained discrete network with its training record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: DiscreteNet,
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub val_preds: PredictionMatrix,
    pub val: MetricReport,
}

/// One SGD step on a batch; updates running statistics when the net keeps them.
pub fn discrete_step(
    net: &mut DiscreteNet,
    opt: &mut Sgd,
    batch: &Split,
    lr: f64,
    label_smoothing: f64,
    noise_seed: u64,
) -> Result<f64> {
    let mode = if net.style.running {
        NormMode::BatchRecord
    } else {
        NormMode::Batch
    };
    let (value, grads, recorded) = {
        let mut ctx = Ctx::new(&net.store, mode).with_noise_seed(noise_seed);
        let x = ctx.input(batch.images.clone());
        let probs = net.forward(&mut ctx, x)?;
        let loss = smoothed_ensemble_loss(&mut ctx.tape, &probs, &batch.labels, label_smoothing)?;
        ctx.backward(loss)?;
        (
            ctx.tape.value(loss).item(),
            ctx.param_grads(),
            ctx.recorded_stats().to_vec(),
        )
    };
    net.update_running(&recorded);
    opt.step(net.store.values_mut(), &grads, lr)?;
    Ok(value)
}

/// Per-head class probabilities of `net` on `images`, in evaluation mode.
pub fn predict(net: &DiscreteNet, images: &Tensor, noise_seed: u64) -> Result<Vec<ProbMatrix>> {
    let n = images.shape()[0];
    let m = net.genotype.num_heads();
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(n * net.spec.classes); m];
    let mode = if net.style.running {
        NormMode::Running(&net.running)
    } else {
        NormMode::Batch
    };
    let mut start = 0;
    while start < n {
        let len = EVAL_CHUNK.min(n - start);
        let mut ctx = Ctx::new(&net.store, mode).with_noise_seed(noise_seed ^ start as u64);
        let x = ctx.input(images.slice_rows(start, len));
        let probs = net.forward(&mut ctx, x)?;
        for (r, p) in rows.iter_mut().zip(&probs) {
            r.extend_from_slice(ctx.tape.value(*p).data());
        }
        start += len;
    }
    rows.into_iter()
        .map(|r| ProbMatrix::new(n, net.spec.classes, r))
        .collect()
}

pub fn predict_split(
    net: &DiscreteNet,
    split: &Split,
    noise_seed: u64,
) -> Result<PredictionMatrix> {
    PredictionMatrix::new(
        predict(net, &split.images, noise_seed)?,
        split.labels.clone(),
    )
}

/// Seed of the op-noise stream used when evaluating a model trained with `seed`.
pub fn eval_noise_seed(seed: u64) -> u64 {
    derive_seed(seed, 11)
}

/// Trains `genotype` from scratch on the training split with the ensemble
/// loss, cosine-annealed SGD, and reports validation metrics.
pub fn train_discrete(
    spec: &ModelSpec,
    genotype: &MultiHeadGenotype,
    data: &DatasetBundle,
    hp: &TrainHyperparams,
    seed: u64,
) -> Result<TrainOutcome> {
    hp.validate("train.")?;
    let mut net = DiscreteNet::new(spec, genotype, NormStyle::FINAL, derive_seed(seed, 8))?;
    let mut opt = Sgd::new(hp.momentum, hp.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 9));
    let train = &data.train;
    let spe = steps_per_epoch(train.len(), hp.batch);
    let batch = hp.batch.min(train.len());
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut steps = 0;
    for epoch in 0..hp.epochs {
        let lr = cosine_lr(epoch, hp.epochs, hp.lr)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for s in 0..spe {
            let b = train.select(&order[s * batch..(s + 1) * batch]);
            total += discrete_step(&mut net, &mut opt, &b, lr, hp.label_smoothing, rng.random())?;
            steps += 1;
        }
        epoch_losses.push(total / spe as f64);
    }
    let val_preds = predict_split(&net, &data.val, eval_noise_seed(seed))?;
    let val = MetricReport::compute(&val_preds)?;
    Ok(TrainOutcome {
        net,
        epoch_losses,
        steps,
        val_preds,
        val,
    })
}
