use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baselines::Method;
use super::bilevel::{bilevel_search_step, SearchState};
use super::hyper::{steps_per_epoch, SearchHyperparams};
use super::optim::{cosine_lr, Adam, Sgd};
use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::metrics::{ensemble_average, nll, PredictionMatrix, ProbMatrix};
use crate::space::{
    sample_genotype_with, ArchMode, ArchParams, ArchView, Ctx, HeadArch, ModelSpec,
    MultiHeadGenotype, NormMode, OpKind, Supernet,
};

/// Per-epoch callback of the continuous searches. Receives the state read-only.
pub trait SearchHook {
    fn after_epoch(&mut self, epoch: usize, state: &SearchState, val: &Split) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation objective of the architecture steps; `None` during warm-start.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub genotype: MultiHeadGenotype,
    /// Final continuous state (absent for RandomNAS).
    pub arch: Option<ArchParams>,
    pub steps: u64,
    pub history: Vec<EpochLog>,
    /// Op set of every head after DrNAS stage 1.
    pub pruned_ops: Option<Vec<Vec<OpKind>>>,
    /// RandomNAS: every evaluated genotype with its validation NLL.
    pub candidates: Vec<(MultiHeadGenotype, f64)>,
}

/// Mixes a run seed with a stream label.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    r.random()
}

/// Splits the training data into the weight half and the architecture half.
pub fn search_split(train: &Split, hp: &SearchHyperparams, seed: u64) -> (Split, Split) {
    train.split_shuffled(
        hp.weight_fraction,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
    )
}

fn check_divisible(spec: &ModelSpec, k: usize) -> Result<()> {
    if spec.head_width % k != 0 {
        return Err(Error::invalid(
            "search",
            format!(
                "head width {} not divisible by partial factor {k}",
                spec.head_width
            ),
        ));
    }
    Ok(())
}

struct Batches {
    order: Vec<usize>,
    batch: usize,
}

impl Batches {
    fn new(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Batches {
            order,
            batch: batch.min(n),
        }
    }

    /// The `i`-th batch, wrapping around the epoch order.
    fn get(&self, split: &Split, i: usize) -> Split {
        let n = self.order.len();
        let idx: Vec<usize> = (0..self.batch)
            .map(|k| self.order[(i * self.batch + k) % n])
            .collect();
        split.select(&idx)
    }
}

/// Runs `epochs` epochs of bilevel steps; the architecture is frozen for the first `warmstart`.
fn run_bilevel(
    state: &mut SearchState,
    train: &Split,
    val: &Split,
    hp: &SearchHyperparams,
    epochs: usize,
    warmstart: usize,
    first_epoch: usize,
    history: &mut Vec<EpochLog>,
    hook: &mut Option<&mut dyn SearchHook>,
) -> Result<()> {
    let spe = steps_per_epoch(train.len(), hp.batch);
    for epoch in 0..epochs {
        let lr = cosine_lr(epoch, epochs, hp.w_lr)?;
        let tb = Batches::new(train.len(), hp.batch, &mut state.rng);
        let vb = Batches::new(val.len(), hp.batch, &mut state.rng);
        let (mut tl, mut vl, mut nv) = (0.0, 0.0, 0usize);
        for s in 0..spe {
            let l = bilevel_search_step(
                state,
                &tb.get(train, s),
                &vb.get(val, s),
                hp,
                lr,
                epoch >= warmstart,
            )?;
            tl += l.train;
            if let Some(v) = l.val {
                vl += v;
                nv += 1;
            }
        }
        history.push(EpochLog {
            epoch: first_epoch + epoch,
            train_loss: tl / spe as f64,
            val_loss: (nv > 0).then(|| vl / nv as f64),
        });
        if let Some(h) = hook.as_deref_mut() {
            h.after_epoch(first_epoch + epoch, state, val)?;
        }
    }
    Ok(())
}

fn genotype_of(arch: &ArchParams, spec: &ModelSpec) -> MultiHeadGenotype {
    arch.discretize(spec.cells, spec.head_width, spec.backbone)
}

/// PC-DARTS: partial channels, edge weights, first-order bilevel updates.
pub fn pcdarts_search(
    data: &DatasetBundle,
    spec: &ModelSpec,
    hp: &SearchHyperparams,
    seed: u64,
    mut hook: Option<&mut dyn SearchHook>,
) -> Result<SearchOutcome> {
    hp.validate_for(Method::Pcdarts, "search.")?;
    check_divisible(spec, hp.partial)?;
    let (train, val) = search_split(&data.train, hp, seed);
    let net = Supernet::new(spec, Some(hp.partial), derive_seed(seed, 2))?;
    let mut arch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let arch = ArchParams::init(ArchMode::PcDarts, spec.nodes, &net.head_ops, &mut arch_rng);
    let mut state = SearchState::new(net, Some(arch), hp, derive_seed(seed, 4));
    let mut history = Vec::new();
    run_bilevel(
        &mut state,
        &train,
        &val,
        hp,
        hp.epochs,
        hp.pcdarts_warmstart,
        0,
        &mut history,
        &mut hook,
    )?;
    let arch = state.arch.expect("continuous search");
    Ok(SearchOutcome {
        genotype: genotype_of(&arch, spec),
        arch: Some(arch),
        steps: state.steps,
        history,
        pruned_ops: None,
        candidates: Vec::new(),
    })
}

/// The `keep` ops of a head with the largest mean concentration over edges,
/// in their original order (ties favour the lower index).
pub fn prune_ops(head: &HeadArch, edges: usize, keep: usize) -> (Vec<usize>, Vec<OpKind>) {
    let n = head.num_ops();
    let mean: Vec<f64> = (0..n)
        .map(|o| (0..edges).map(|e| head.alpha[e * n + o]).sum::<f64>() / edges as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    let mut kept: Vec<usize> = order.into_iter().take(keep.min(n)).collect();
    kept.sort_unstable();
    let ops = kept.iter().map(|&i| head.ops[i]).collect();
    (kept, ops)
}

/// DrNAS: Dirichlet-distributed op weights, two progressive stages.
///
/// Stage 1 searches all ops with partial factor `K`; each head then keeps its
/// `drnas_keep_ops` strongest ops and stage 2 continues with the smaller
/// factor `drnas_stage2_partial`, reusing every weight whose shape is unchanged.
pub fn drnas_search(
    data: &DatasetBundle,
    spec: &ModelSpec,
    hp: &SearchHyperparams,
    seed: u64,
    mut hook: Option<&mut dyn SearchHook>,
) -> Result<SearchOutcome> {
    hp.validate_for(Method::Drnas, "search.")?;
    check_divisible(spec, hp.partial)?;
    check_divisible(spec, hp.drnas_stage2_partial)?;
    let (train, val) = search_split(&data.train, hp, seed);
    let [e1, e2] = hp.drnas_stages();
    let net = Supernet::new(spec, Some(hp.partial), derive_seed(seed, 2))?;
    let mut arch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let arch = ArchParams::init(ArchMode::DrNas, spec.nodes, &net.head_ops, &mut arch_rng);
    let mut state = SearchState::new(net, Some(arch), hp, derive_seed(seed, 4));
    let mut history = Vec::new();
    run_bilevel(
        &mut state,
        &train,
        &val,
        hp,
        e1,
        hp.drnas_warmstart,
        0,
        &mut history,
        &mut hook,
    )?;

    let arch1 = state.arch.take().expect("continuous search");
    let edges = arch1.num_edges();
    let mut heads = Vec::with_capacity(arch1.heads.len());
    let mut head_ops = Vec::with_capacity(arch1.heads.len());
    for h in &arch1.heads {
        let (kept, ops) = prune_ops(h, edges, hp.drnas_keep_ops);
        let n = h.num_ops();
        let alpha = (0..edges)
            .flat_map(|e| kept.iter().map(move |&o| h.alpha[e * n + o]))
            .collect();
        heads.push(HeadArch {
            ops: ops.clone(),
            alpha,
            beta: Vec::new(),
        });
        head_ops.push(ops);
    }
    let arch2 = ArchParams {
        mode: ArchMode::DrNas,
        nodes: spec.nodes,
        heads,
    };
    let mut net2 = Supernet::with_head_ops(
        spec,
        head_ops.clone(),
        Some(hp.drnas_stage2_partial),
        derive_seed(seed, 5),
    )?;
    net2.store.copy_matching_from(&state.net.store);
    state.net = net2;
    state.arch = Some(arch2);
    state.w_opt = Sgd::new(hp.w_momentum, hp.w_weight_decay);
    state.a_opt = Adam::new(hp.a_beta1, hp.a_beta2, hp.a_weight_decay);
    run_bilevel(
        &mut state,
        &train,
        &val,
        hp,
        e2,
        hp.drnas_warmstart,
        e1,
        &mut history,
        &mut hook,
    )?;
    let arch = state.arch.expect("continuous search");
    Ok(SearchOutcome {
        genotype: genotype_of(&arch, spec),
        arch: Some(arch),
        steps: state.steps,
        history,
        pruned_ops: Some(head_ops),
        candidates: Vec::new(),
    })
}

/// Evaluation chunk size; batch statistics are computed per chunk.
pub const EVAL_CHUNK: usize = 256;

/// Per-head predictions of the supernetwork restricted to `g`.
pub fn supernet_predictions(
    net: &Supernet,
    g: &MultiHeadGenotype,
    split: &Split,
    noise_seed: u64,
) -> Result<PredictionMatrix> {
    let m = g.num_heads();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut start = 0;
    while start < split.len() {
        let len = EVAL_CHUNK.min(split.len() - start);
        let chunk = split.slice(start, len);
        let mut ctx =
            Ctx::new(&net.store, NormMode::Batch).with_noise_seed(noise_seed ^ start as u64);
        let x = ctx.input(chunk.images);
        let probs = net.forward(&mut ctx, x, &ArchView::Discrete(g))?;
        for (r, p) in rows.iter_mut().zip(&probs) {
            r.extend_from_slice(ctx.tape.value(*p).data());
        }
        start += len;
    }
    let classes = net.spec.classes;
    let members = rows
        .into_iter()
        .map(|r| ProbMatrix::new(split.len(), classes, r))
        .collect::<Result<Vec<_>>>()?;
    PredictionMatrix::new(members, split.labels.clone())
}

/// Index of the smallest value; the first wins ties.
pub fn select_min(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// RandomNAS: one random genotype per mini-batch trains the shared weights;
/// afterwards `eval_samples` random genotypes are scored on the architecture
/// half and the lowest ensemble NLL wins.
pub fn randomnas_search(
    data: &DatasetBundle,
    spec: &ModelSpec,
    hp: &SearchHyperparams,
    seed: u64,
) -> Result<SearchOutcome> {
    hp.validate("search.")?;
    let (train, val) = search_split(&data.train, hp, seed);
    let net = Supernet::new(spec, None, derive_seed(seed, 2))?;
    let mut state = SearchState::new(net, None, hp, derive_seed(seed, 4));
    let gspec = spec.genotype_spec();
    let spe = steps_per_epoch(train.len(), hp.batch);
    let mut history = Vec::new();
    for epoch in 0..hp.epochs {
        let lr = cosine_lr(epoch, hp.epochs, hp.w_lr)?;
        let tb = Batches::new(train.len(), hp.batch, &mut state.rng);
        let mut tl = 0.0;
        for s in 0..spe {
            let g = sample_genotype_with(&mut state.rng, &gspec, spec.backbone);
            tl += state.sampled_weight_step(&g, &tb.get(&train, s), lr)?;
            state.steps += 1;
        }
        history.push(EpochLog {
            epoch,
            train_loss: tl / spe as f64,
            val_loss: None,
        });
    }
    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6));
    let noise_seed = derive_seed(seed, 7);
    let mut candidates = Vec::with_capacity(hp.eval_samples);
    for _ in 0..hp.eval_samples {
        let g = sample_genotype_with(&mut eval_rng, &gspec, spec.backbone);
        let preds = supernet_predictions(&state.net, &g, &val, noise_seed)?;
        let v = nll(&ensemble_average(&preds), &preds.labels)?;
        candidates.push((g, v));
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    let best = select_min(&scores).expect("at least one sample");
    Ok(SearchOutcome {
        genotype: candidates[best].0.clone(),
        arch: None,
        steps: state.steps,
        history,
        pruned_ops: None,
        candidates,
    })
}
