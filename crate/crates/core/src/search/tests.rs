use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dirichlet::{sample_dirichlet, sample_log_gamma};
use super::*;
use crate::data::{gen_synthetic, DatasetBundle, SyntheticSpec};
use crate::metrics::{PredictionMatrix, ProbMatrix};
use crate::space::{
    head_probabilities, sample_random_genotype, ArchMode, ArchParams, BackboneSpec, Ctx,
    DiscreteNet, HeadArch, ModelSpec, NormMode, NormStyle, OpKind, Supernet,
};
use crate::tensor::Tensor;

fn tiny_spec(heads: usize) -> ModelSpec {
    ModelSpec {
        in_channels: 1,
        classes: 3,
        backbone: BackboneSpec {
            layers: 1,
            width: 4,
        },
        heads,
        cells: 2,
        nodes: 2,
        head_width: 4,
        ops: OpKind::ALL.to_vec(),
        op_noise: None,
    }
}

fn tiny_data(seed: u64) -> DatasetBundle {
    let spec = SyntheticSpec {
        size: 8,
        ..SyntheticSpec::new(3, 24, 12, 12)
    };
    gen_synthetic(&spec, seed).unwrap()
}

fn tiny_hp() -> SearchHyperparams {
    SearchHyperparams {
        epochs: 4,
        batch: 6,
        partial: 2,
        pcdarts_warmstart: 1,
        drnas_warmstart: 1,
        eval_samples: 4,
        ..SearchHyperparams::default()
    }
}

fn tiny_train() -> TrainHyperparams {
    TrainHyperparams {
        epochs: 1,
        batch: 8,
        ..TrainHyperparams::default()
    }
}

#[test]
fn cosine_schedule_examples() {
    assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
    assert!((cosine_lr(5, 10, 0.1).unwrap() - 0.05).abs() < 1e-15);
    assert!(cosine_lr(10, 10, 0.1).unwrap().abs() < 1e-15);
    assert!((cosine_lr(1, 4, 2.0).unwrap() - (1.0 + 0.5f64.sqrt())).abs() < 1e-12);
    assert!(cosine_lr(11, 10, 0.1).is_err());
    assert!(cosine_lr(0, 0, 0.1).is_err());
}

#[test]
fn sgd_matches_hand_recurrence() {
    let (mu, wd, lr) = (0.9, 0.01, 0.5);
    let mut opt = Sgd::new(mu, wd);
    let mut p = [Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()];
    let grads = [[0.3, 0.1], [-0.2, 0.4], [0.05, -0.5]];
    let (mut w, mut v) = ([1.0f64, -2.0], [0.0f64; 2]);
    for g in grads {
        opt.step(
            &mut p,
            &[Some(Tensor::new(vec![2], g.to_vec()).unwrap())],
            lr,
        )
        .unwrap();
        for k in 0..2 {
            v[k] = mu * v[k] + g[k] + wd * w[k];
            w[k] -= lr * v[k];
        }
    }
    assert!((p[0].data()[0] - w[0]).abs() < 1e-15);
    assert!((p[0].data()[1] - w[1]).abs() < 1e-15);
}

#[test]
fn sgd_leaves_parameters_without_gradient_alone() {
    let mut opt = Sgd::new(0.9, 0.1);
    let mut p = [
        Tensor::new(vec![1], vec![3.0]).unwrap(),
        Tensor::new(vec![1], vec![1.0]).unwrap(),
    ];
    opt.step(
        &mut p,
        &[None, Some(Tensor::new(vec![1], vec![1.0]).unwrap())],
        0.1,
    )
    .unwrap();
    assert_eq!(p[0].data(), &[3.0]);
    assert!((p[1].data()[0] - (1.0 - 0.1 * 1.1)).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let mut opt = Adam::new(0.5, 0.999, 0.0);
    let mut p = [Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap()];
    let g = Tensor::new(vec![3], vec![2.5, -0.001, 40.0]).unwrap();
    opt.step(&mut p, &[Some(g)], 3e-4).unwrap();
    assert_eq!(opt.steps_taken(), 1);
    let expect = [-3e-4, 1.0 + 3e-4, -1.0 - 3e-4];
    for (a, b) in p[0].data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn optimizer_rejects_mismatched_gradient() {
    let mut p = [Tensor::zeros(&[2])];
    let g = [Some(Tensor::zeros(&[3]))];
    assert!(Sgd::new(0.9, 0.0).step(&mut p, &g, 0.1).is_err());
    assert!(Adam::new(0.5, 0.999, 0.0).step(&mut p, &g, 0.1).is_err());
}

#[test]
fn dirichlet_samples_lie_on_simplex_with_expected_mean() {
    let alpha = [2.0, 4.0, 8.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let mut mean = [0.0; 3];
    for _ in 0..n {
        let w = sample_dirichlet(&alpha, &mut rng);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
        for (m, v) in mean.iter_mut().zip(&w) {
            *m += v / n as f64;
        }
    }
    for (m, a) in mean.iter().zip(alpha) {
        assert!((m - a / 14.0).abs() < 0.02, "{m} vs {}", a / 14.0);
    }
    assert!((mean[2] - 8.0 / 14.0).abs() < 0.01);
}

#[test]
fn gamma_moments_and_pathwise_derivative() {
    // E[g] = a and d E[g] / da = E[g * dlog g / da] = 1.
    for a in [0.3f64, 1.0, 5.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(a.to_bits());
        let n = 40_000;
        let (mut mean, mut deriv) = (0.0, 0.0);
        for _ in 0..n {
            let d = sample_log_gamma(a, &mut rng);
            let g = d.log_value.exp();
            mean += g / n as f64;
            deriv += g * d.dlog_dshape / n as f64;
        }
        assert!((mean - a).abs() < 0.04 * a.max(1.0), "a={a} mean {mean}");
        assert!((deriv - 1.0).abs() < 0.05, "a={a} derivative {deriv}");
    }
}

#[test]
fn pathwise_derivative_matches_common_noise_difference() {
    // Same RNG stream, nearby shapes: the acceptance loop takes the same path.
    let a = 1.7;
    let h = 1e-6;
    for seed in 0..20 {
        let d = sample_log_gamma(a, &mut ChaCha8Rng::seed_from_u64(seed));
        let up = sample_log_gamma(a + h, &mut ChaCha8Rng::seed_from_u64(seed));
        let dn = sample_log_gamma(a - h, &mut ChaCha8Rng::seed_from_u64(seed));
        let fd = (up.log_value - dn.log_value) / (2.0 * h);
        assert!(
            (fd - d.dlog_dshape).abs() < 1e-5 * (1.0 + fd.abs()),
            "seed {seed}: {fd} vs {}",
            d.dlog_dshape
        );
    }
}

fn arch_fixture(
    mode: ArchMode,
    heads: usize,
    seed: u64,
) -> (SearchState, ArchParams, crate::data::Split) {
    let spec = tiny_spec(heads);
    let net = Supernet::new(&spec, Some(2), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut arch = ArchParams::init(mode, spec.nodes, &net.head_ops, &mut rng);
    let flat: Vec<f64> = arch
        .flatten()
        .iter()
        .map(|v| {
            if mode == ArchMode::DrNas {
                v + rand::Rng::random_range(&mut rng, 0.0..2.0)
            } else {
                rand::Rng::random_range(&mut rng, -1.0..1.0)
            }
        })
        .collect();
    arch.set_flat(&flat).unwrap();
    let data = tiny_data(seed);
    let batch = data.val.slice(0, 8);
    let state = SearchState::new(net, Some(arch.clone()), &tiny_hp(), seed);
    (state, arch, batch)
}

#[test]
fn arch_gradient_matches_finite_differences() {
    for mode in [ArchMode::Darts, ArchMode::PcDarts, ArchMode::DrNas] {
        let (state, arch, batch) = arch_fixture(mode, 2, 5);
        let (_, grad) = state.arch_loss_grad(&arch, &batch, 0.1, 9).unwrap();
        assert_eq!(grad.len(), arch.len());
        let base = arch.flatten();
        let h = 1e-5;
        for i in (0..base.len()).step_by(base.len() / 12 + 1) {
            let eval = |d: f64| {
                let mut a = arch.clone();
                let mut v = base.clone();
                v[i] += d;
                a.set_flat(&v).unwrap();
                state.arch_loss_grad(&a, &batch, 0.1, 9).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * (1.0 + fd.abs()),
                "{mode:?} coord {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }
}

#[test]
fn single_head_objective_has_no_diversity_term() {
    let (state, arch, batch) = arch_fixture(ArchMode::PcDarts, 1, 2);
    let (l0, g0) = state.arch_loss_grad(&arch, &batch, 0.0, 1).unwrap();
    let (l1, g1) = state.arch_loss_grad(&arch, &batch, 0.7, 1).unwrap();
    assert!((l0 - l1).abs() < 1e-12);
    let dot: f64 = g0.iter().zip(&g1).map(|(a, b)| a * b).sum();
    let n0: f64 = g0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n1: f64 = g1.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(dot / (n0 * n1) > 1.0 - 1e-9);
}

#[test]
fn warm_start_steps_leave_architecture_untouched() {
    let (mut state, arch, batch) = arch_fixture(ArchMode::PcDarts, 2, 4);
    let hp = tiny_hp();
    let before: Vec<Tensor> = state.net.store.values().to_vec();
    for _ in 0..3 {
        bilevel_search_step(&mut state, &batch, &batch, &hp, 0.05, false).unwrap();
    }
    assert_eq!(state.arch.as_ref().unwrap(), &arch);
    assert_eq!(state.a_opt.steps_taken(), 0);
    assert_eq!(state.steps, 3);
    assert!(state
        .net
        .store
        .values()
        .iter()
        .zip(&before)
        .any(|(a, b)| a != b));
    let l = bilevel_search_step(&mut state, &batch, &batch, &hp, 0.05, true).unwrap();
    assert!(l.val.is_some());
    assert_ne!(state.arch.as_ref().unwrap(), &arch);
    assert_eq!(state.a_opt.steps_taken(), 1);
}

#[test]
fn drnas_steps_keep_concentrations_positive() {
    let (mut state, _, batch) = arch_fixture(ArchMode::DrNas, 2, 6);
    let hp = SearchHyperparams {
        a_lr: 0.5,
        ..tiny_hp()
    };
    for _ in 0..4 {
        bilevel_search_step(&mut state, &batch, &batch, &hp, 0.05, true).unwrap();
    }
    let arch = state.arch.as_ref().unwrap();
    assert!(arch.is_finite());
    assert!(arch
        .flatten()
        .iter()
        .all(|&a| a >= crate::space::CONCENTRATION_FLOOR));
}

#[test]
fn discrete_view_training_matches_standalone_training() {
    let spec = tiny_spec(2);
    let data = tiny_data(3);
    let net = Supernet::new(&spec, None, 21).unwrap();
    let g = sample_random_genotype(8, &spec.genotype_spec(), spec.backbone);
    let mut standalone = DiscreteNet::new(&spec, &g, NormStyle::SEARCH, 1).unwrap();
    standalone.store.copy_matching_from(&net.store);
    let mut state = SearchState::new(net, None, &tiny_hp(), 0);
    state.w_opt = Sgd::new(0.9, 3e-4);
    let mut opt = Sgd::new(0.9, 3e-4);
    for s in 0..4 {
        let b = data.train.slice(s * 6, 6);
        let a = state.sampled_weight_step(&g, &b, 0.1).unwrap();
        let c = discrete_step(&mut standalone, &mut opt, &b, 0.1, 0.0, 0).unwrap();
        assert!((a - c).abs() < 1e-10, "step {s}: {a} vs {c}");
    }
    let x = data.val.images.clone();
    let mut ctx = Ctx::new(&state.net.store, NormMode::Batch);
    let xv = ctx.input(x.clone());
    let p = state
        .net
        .forward(&mut ctx, xv, &crate::space::ArchView::Discrete(&g))
        .unwrap();
    let a = head_probabilities(&p, &ctx);
    let mut ctx = Ctx::new(&standalone.store, NormMode::Batch);
    let xv = ctx.input(x);
    let p = standalone.forward(&mut ctx, xv).unwrap();
    let b = head_probabilities(&p, &ctx);
    for (p, q) in a.iter().zip(&b) {
        assert!(p.max_abs_diff(q) < 1e-10);
    }
}

fn pool_of(rows: &[&[[f64; 2]]], labels: Vec<usize>) -> PredictionMatrix {
    let members = rows
        .iter()
        .map(|m| ProbMatrix::new(m.len(), 2, m.iter().flatten().copied().collect()).unwrap())
        .collect();
    PredictionMatrix::new(members, labels).unwrap()
}

fn oracle_nll(pool: &PredictionMatrix, idx: &[usize]) -> f64 {
    let n = pool.labels.len();
    (0..n)
        .map(|i| {
            let p: f64 = idx
                .iter()
                .map(|&m| pool.members[m].row(i)[pool.labels[i]])
                .sum::<f64>()
                / idx.len() as f64;
            -p.max(1e-12).ln()
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn forward_selection_prefers_complementary_specialists() {
    let labels = vec![0, 0, 1, 1];
    let a: &[[f64; 2]] = &[[0.99, 0.01], [0.99, 0.01], [0.4, 0.6], [0.4, 0.6]];
    let b: &[[f64; 2]] = &[[0.4, 0.6], [0.4, 0.6], [0.01, 0.99], [0.01, 0.99]];
    let c: &[[f64; 2]] = &[[0.7, 0.3], [0.7, 0.3], [0.3, 0.7], [0.3, 0.7]];
    let pool = pool_of(&[a, b, c], labels);
    let singles: Vec<f64> = (0..3).map(|i| oracle_nll(&pool, &[i])).collect();
    let first = select_min(&singles).unwrap();
    let picked = forward_select(&pool, 2, false).unwrap();
    assert_eq!(picked[0], first);
    let second = (0..3)
        .filter(|&i| i != first)
        .min_by(|&x, &y| oracle_nll(&pool, &[first, x]).total_cmp(&oracle_nll(&pool, &[first, y])))
        .unwrap();
    assert_eq!(picked[1], second);
    assert!((subset_nll(&pool, &picked).unwrap() - oracle_nll(&pool, &picked)).abs() < 1e-12);
    assert!(forward_select(&pool, 4, false).is_err());
    assert_eq!(forward_select(&pool, 4, true).unwrap().len(), 4);
}

#[test]
fn forward_selection_matches_exhaustive_greedy_on_random_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let rows: Vec<Vec<[f64; 2]>> = (0..6)
            .map(|_| {
                (0..10)
                    .map(|_| {
                        let p: f64 = rand::Rng::random_range(&mut rng, 0.02..0.98);
                        [p, 1.0 - p]
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[[f64; 2]]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels = (0..10).map(|i| i % 2).collect();
        let pool = pool_of(&refs, labels);
        let picked = forward_select(&pool, 3, false).unwrap();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            let mut best = (f64::INFINITY, 0);
            for c in (0..6).filter(|c| !chosen.contains(c)) {
                let mut s = chosen.clone();
                s.push(c);
                let v = oracle_nll(&pool, &s);
                if v < best.0 - 1e-12 {
                    best = (v, c);
                }
            }
            chosen.push(best.1);
        }
        assert_eq!(picked, chosen);
    }
}

#[test]
fn prune_keeps_strongest_ops_in_original_order() {
    let ops = OpKind::ALL.to_vec();
    let edges = 2;
    let means = [0.5, 3.0, 1.0, 2.0, 0.1, 2.5, 0.2];
    let alpha: Vec<f64> = (0..edges)
        .flat_map(|e| {
            means
                .iter()
                .map(move |m| m + if e == 0 { 0.1 } else { -0.1 })
        })
        .collect();
    let head = HeadArch {
        ops: ops.clone(),
        alpha,
        beta: Vec::new(),
    };
    let (idx, kept) = prune_ops(&head, edges, 4);
    assert_eq!(idx, vec![1, 2, 3, 5]);
    assert_eq!(kept, vec![ops[1], ops[2], ops[3], ops[5]]);
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            format!("\"{}\"", m.name())
        );
    }
    assert!("darts".parse::<Method>().is_err());
}

#[test]
fn budget_plan_examples() {
    let s = SearchHyperparams {
        epochs: 50,
        batch: 64,
        ..SearchHyperparams::default()
    };
    let t = TrainHyperparams {
        epochs: 100,
        batch: 128,
        ..TrainHyperparams::default()
    };
    // 1000 training examples: 500 for weights -> 7 steps per search epoch; 7 per training epoch.
    let p = plan_budget(Method::Pcdarts, 1000, 3, 25, &s, &t);
    assert_eq!(
        (p.search_steps, p.train_steps, p.models_trained),
        (350, 700, 1)
    );
    let d = plan_budget(Method::DeepensRs, 1000, 3, 25, &s, &t);
    assert_eq!(
        (d.search_steps, d.train_steps, d.models_trained),
        (0, 27 * 700, 27)
    );
    assert_eq!(
        plan_budget(Method::HyperdeepensRs, 1000, 3, 25, &s, &t).models_trained,
        50
    );
    assert_eq!(
        plan_budget(Method::DeepensSample, 1000, 3, 25, &s, &t).models_trained,
        3
    );
    assert_eq!(
        plan_budget(Method::MheSample, 1000, 3, 25, &s, &t).total_steps,
        700
    );
    assert!(d.total_steps as f64 / p.total_steps as f64 > 10.0);
}

#[test]
fn searches_are_deterministic_and_count_steps() {
    let spec = tiny_spec(2);
    let data = tiny_data(1);
    let hp = tiny_hp();
    let plan = plan_budget(Method::Pcdarts, data.train.len(), 2, 1, &hp, &tiny_train());
    let a = pcdarts_search(&data, &spec, &hp, 7, None).unwrap();
    let b = pcdarts_search(&data, &spec, &hp, 7, None).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(a.arch, b.arch);
    assert_eq!(a.steps, plan.search_steps);
    assert_eq!(a.history.len(), hp.epochs);
    assert!(a.history[0].val_loss.is_none() && a.history[1].val_loss.is_some());
    a.genotype.validate().unwrap();

    let d = drnas_search(&data, &spec, &hp, 7, None).unwrap();
    assert_eq!(d.steps, plan.search_steps);
    assert_eq!(d.history.len(), hp.epochs);
    let pruned = d.pruned_ops.unwrap();
    assert!(pruned.iter().all(|ops| ops.len() == 4));
    for (h, cell) in d.genotype.heads.iter().enumerate() {
        assert!(cell
            .iter()
            .flat_map(|n| n.ops)
            .all(|op| pruned[h].contains(&op)));
    }

    let r = randomnas_search(&data, &spec, &hp, 7).unwrap();
    assert_eq!(r.steps, plan.search_steps);
    assert_eq!(r.candidates.len(), hp.eval_samples);
    let best = r
        .candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min);
    assert!(r
        .candidates
        .iter()
        .any(|c| c.0 == r.genotype && c.1 == best));
}

struct CountHook(Vec<usize>);

impl SearchHook for CountHook {
    fn after_epoch(
        &mut self,
        epoch: usize,
        state: &SearchState,
        _: &crate::data::Split,
    ) -> crate::Result<()> {
        assert!(state.arch.is_some());
        self.0.push(epoch);
        Ok(())
    }
}

#[test]
fn hook_sees_every_epoch() {
    let mut hook = CountHook(Vec::new());
    drnas_search(&tiny_data(2), &tiny_spec(1), &tiny_hp(), 3, Some(&mut hook)).unwrap();
    assert_eq!(hook.0, vec![0, 1, 2, 3]);
}

#[test]
fn baselines_match_their_budget_plan() {
    let spec = tiny_spec(2);
    let data = tiny_data(4);
    let t = tiny_train();
    let pool = 3;
    for kind in Method::ALL.into_iter().filter(|m| !m.is_search()) {
        let out = build_baseline(kind, &spec, &data, &t, pool, 5).unwrap();
        let plan = plan_budget(kind, data.train.len(), spec.heads, pool, &tiny_hp(), &t);
        assert_eq!(out.steps, plan.train_steps, "{kind}");
        assert_eq!(out.models_trained, plan.models_trained, "{kind}");
        let preds = out.ensemble.predictions(&data.val).unwrap();
        assert_eq!(preds.num_members(), spec.heads, "{kind}");
        assert!(out.val.nll.is_finite());
    }
    assert!(build_baseline(Method::Drnas, &spec, &data, &t, pool, 5).is_err());
}

#[test]
fn deep_ensemble_members_share_one_architecture() {
    let spec = tiny_spec(3);
    let out = build_baseline(
        Method::DeepensSample,
        &spec,
        &tiny_data(6),
        &tiny_train(),
        2,
        1,
    )
    .unwrap();
    let g = out.ensemble.genotypes();
    assert_eq!(g.len(), 3);
    assert!(g.iter().all(|x| x == &g[0] && x.num_heads() == 1));
}

#[test]
fn training_loss_falls_over_the_first_epochs() {
    let spec = tiny_spec(2);
    let data = gen_synthetic(
        &SyntheticSpec {
            size: 8,
            ..SyntheticSpec::new(3, 96, 24, 12)
        },
        3,
    )
    .unwrap();
    let g = sample_random_genotype(4, &spec.genotype_spec(), spec.backbone);
    let hp = TrainHyperparams {
        epochs: 5,
        batch: 16,
        lr: 0.05,
        ..TrainHyperparams::default()
    };
    let out = train_discrete(&spec, &g, &data, &hp, 2).unwrap();
    assert_eq!(out.epoch_losses.len(), 5);
    for w in out.epoch_losses.windows(2) {
        assert!(w[1] < w[0], "{:?}", out.epoch_losses);
    }
}

#[test]
fn single_head_loss_is_twice_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = [2, 0, 1, 1, 3];
    for _ in 0..5 {
        let logits = Tensor::randn(&[5, 4], 2.0, &mut rng);
        let run = |ensemble: bool| {
            let mut t = crate::Tape::new();
            let x = t.param(logits.clone());
            let loss = if ensemble {
                let p = t.softmax(x, 1).unwrap();
                crate::metrics::ensemble_train_loss(&mut t, &[p], &labels).unwrap()
            } else {
                let lp = t.log_softmax(x, 1).unwrap();
                let picked = t.pick(lp, &labels).unwrap();
                let m = t.mean(picked).unwrap();
                t.scale(m, -1.0)
            };
            t.backward(loss).unwrap();
            (t.value(loss).item(), t.grad(x).unwrap().data().to_vec())
        };
        let (l2, g2) = run(true);
        let (l1, g1) = run(false);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        let dot: f64 = g1.iter().zip(&g2).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((dot / (norm(&g1) * norm(&g2)) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn single_eval_sample_is_returned_as_is() {
    let hp = SearchHyperparams {
        eval_samples: 1,
        ..tiny_hp()
    };
    let r = randomnas_search(&tiny_data(5), &tiny_spec(2), &hp, 9).unwrap();
    assert_eq!(r.candidates.len(), 1);
    assert_eq!(r.genotype, r.candidates[0].0);
}

#[test]
fn select_min_takes_the_first_of_ties() {
    assert_eq!(select_min(&[0.5, 0.2, 0.9, 0.2]), Some(1));
    assert_eq!(select_min(&[0.3]), Some(0));
    assert_eq!(select_min(&[]), None);
}
