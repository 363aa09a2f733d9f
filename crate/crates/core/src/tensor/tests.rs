use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces `out` to a scalar against fixed random weights so every output
/// coordinate contributes a distinct amount to the checked gradient.
fn probe(t: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let w = Tensor::randn(t.shape(out), 1.0, &mut rng(seed));
    let w = t.constant(w);
    let prod = t.mul(out, w)?;
    Ok(t.sum(prod))
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_slice(shape, data).unwrap()
}

const FD_EPS: f64 = 1e-5;

#[test]
fn add_values() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn mul_by_zero_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 5.0]));
    let z = tape.constant(Tensor::zeros(&[3]));
    let y = tape.mul(x, z).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    for seed in 0..10 {
        let a = Tensor::randn(&[3, 3], 1.0, &mut rng(seed));
        let b = Tensor::randn(&[3, 3], 1.0, &mut rng(seed + 100));
        let err = grad_check_many(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[1])?;
                let m = t.mul(d, v[1])?;
                let m = t.scale(m, 0.7);
                let m = t.add_scalar(m, 2.0);
                probe(t, m, seed)
            },
            &[a, b],
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn elementwise_shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let err = tape.add(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
}

#[test]
fn matmul_values() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.matmul(i, x).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let z = tape.matmul(x, ones).unwrap();
    assert_eq!(tape.shape(z), &[2, 1]);
    assert_eq!(tape.value(z).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_inner_mismatch_is_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        tape.matmul(a, b),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let a = Tensor::randn(&[4, 5], 1.0, &mut rng(seed));
        let b = Tensor::randn(&[5, 3], 1.0, &mut rng(seed + 50));
        let err = grad_check_many(
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                probe(t, m, seed)
            },
            &[a, b],
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn conv_identity_kernel_is_identity() {
    let x = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut rng(1));
    let mut k = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        k.data_mut()[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(k);
    let y = tape.conv2d(xv, kv, ConvParams::default()).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_output_extent_formula() {
    assert_eq!(conv_out_extent(8, 3, 2, 1, 1).unwrap(), 4);
    for h in 1..12 {
        for k in [1, 3, 5] {
            for s in 1..4 {
                for p in 0..3 {
                    for d in 1..3 {
                        let span = d * (k - 1) + 1;
                        let expect = (h + 2 * p >= span).then(|| (h + 2 * p - span) / s + 1);
                        assert_eq!(conv_out_extent(h, k, s, p, d).ok(), expect);
                        if let Some(e) = expect {
                            let mut tape = Tape::new();
                            let x = tape.constant(Tensor::zeros(&[1, 2, h, h]));
                            let kk = tape.constant(Tensor::zeros(&[2, 1, k, k]));
                            let p = ConvParams {
                                stride: s,
                                padding: p,
                                dilation: d,
                                groups: 2,
                            };
                            let y = tape.conv2d(x, kk, p).unwrap();
                            assert_eq!(tape.shape(y), &[1, 2, e, e]);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn pool_output_extent_follows_conv_formula() {
    for h in 1..12 {
        for s in 1..4 {
            for (k, p) in [(3, 1), (3, 0), (2, 0), (5, 2)] {
                let expect = conv_out_extent(h, k, s, p, 1).ok();
                for kind in [PoolKind::Max, PoolKind::Avg] {
                    let mut tape = Tape::new();
                    let x = tape.constant(Tensor::zeros(&[1, 1, h, h]));
                    let pp = PoolParams {
                        window: k,
                        stride: s,
                        padding: p,
                    };
                    let got = tape.pool2d(kind, x, pp).ok().map(|y| tape.shape(y)[2]);
                    assert_eq!(got, expect, "h={h} k={k} s={s} p={p}");
                }
            }
        }
    }
}

#[test]
fn conv_rejects_bad_groups_and_empty_output() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
    let p = ConvParams {
        groups: 2,
        ..Default::default()
    };
    assert!(tape.conv2d(x, k, p).is_err());
    let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let k = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(tape.conv2d(x, k, ConvParams::default()).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    let configs = [
        (
            2,
            2,
            3,
            ConvParams {
                stride: 1,
                padding: 1,
                dilation: 1,
                groups: 1,
            },
        ),
        (
            2,
            2,
            3,
            ConvParams {
                stride: 2,
                padding: 1,
                dilation: 1,
                groups: 1,
            },
        ),
        (
            2,
            2,
            3,
            ConvParams {
                stride: 1,
                padding: 2,
                dilation: 2,
                groups: 2,
            },
        ),
        (
            4,
            4,
            5,
            ConvParams {
                stride: 2,
                padding: 2,
                dilation: 1,
                groups: 4,
            },
        ),
        (
            4,
            2,
            1,
            ConvParams {
                stride: 2,
                padding: 0,
                dilation: 1,
                groups: 1,
            },
        ),
    ];
    for (i, &(c, o, k, p)) in configs.iter().enumerate() {
        for seed in 0..10 {
            let x = Tensor::randn(&[1, c, 6, 6], 1.0, &mut rng(seed));
            let w = Tensor::randn(&[o, c / p.groups, k, k], 0.5, &mut rng(seed + 7));
            let err = grad_check_many(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], p)?;
                    probe(t, y, seed)
                },
                &[x, w],
                FD_EPS,
            )
            .unwrap();
            assert!(err < 1e-5, "config {i} seed {seed}: {err}");
        }
    }
}

#[test]
fn pool_of_constant_is_constant() {
    let x = Tensor::full(&[1, 2, 5, 5], 3.25);
    for kind in [PoolKind::Max, PoolKind::Avg] {
        for stride in [1, 2] {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let p = PoolParams {
                window: 3,
                stride,
                padding: 1,
            };
            let y = tape.pool2d(kind, v, p).unwrap();
            assert!(tape.value(y).data().iter().all(|&v| v == 3.25));
        }
    }
}

#[test]
fn avg_pool_two_by_two() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]));
    let p = PoolParams {
        window: 2,
        stride: 2,
        padding: 0,
    };
    let y = tape.pool2d(PoolKind::Avg, x, p).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1, 1, 2, 2], &[2.0, 2.0, 1.0, 2.0]));
    let p = PoolParams {
        window: 2,
        stride: 2,
        padding: 0,
    };
    let y = tape.pool2d(PoolKind::Max, x, p).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn pool_gradients_match_finite_differences() {
    for seed in 0..10 {
        // Distinct values keep max pooling away from ties.
        let x = Tensor::randn(&[2, 2, 6, 6], 1.0, &mut rng(seed));
        for (kind, stride) in [
            (PoolKind::Avg, 1),
            (PoolKind::Avg, 2),
            (PoolKind::Max, 1),
            (PoolKind::Max, 2),
        ] {
            let p = PoolParams {
                window: 3,
                stride,
                padding: 1,
            };
            let err = grad_check(
                |t, v| {
                    let y = t.pool2d(kind, v, p)?;
                    probe(t, y, seed)
                },
                &x,
                FD_EPS,
            )
            .unwrap();
            assert!(err < 1e-5, "{kind:?} stride {stride} seed {seed}: {err}");
        }
    }
}

#[test]
fn normalize_constant_channel_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[3, 2, 4, 4], 1.5));
    let y = tape.normalize(x, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn normalize_standardizes_each_channel() {
    let eps = 1e-5;
    let x = Tensor::randn(&[4, 3, 5, 5], 5.0, &mut rng(3));
    let (_, raw_var) = kernels::channel_moments(x.shape(), x.data());
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = tape.normalize(v, eps).unwrap();
    let (mean, var) = kernels::channel_moments(tape.shape(y), tape.value(y).data());
    for c in 0..3 {
        assert!(mean[c].abs() < 1e-10);
        assert!((var[c] - 1.0).abs() < 1e-6, "{}", var[c]);
        assert!((var[c] - raw_var[c] / (raw_var[c] + eps)).abs() < 1e-12);
    }
}

#[test]
fn normalize_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let x = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng(seed));
        let err = grad_check(
            |t, v| {
                let y = t.normalize(v, 1e-5)?;
                probe(t, y, seed)
            },
            &x,
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_basics() {
    let mut tape = Tape::new();
    let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
    let s = tape.softmax(z, 1).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let x = Tensor::randn(&[4, 6], 2.0, &mut rng(9));
    let a = tape.constant(x.clone());
    let b = tape.constant(x.map(|v| v + 100.0));
    let sa = tape.softmax(a, 1).unwrap();
    let sb = tape.softmax(b, 1).unwrap();
    assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < 1e-12);
    for row in tape.value(sa).data().chunks(6) {
        assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn softmax_over_leading_axis() {
    let x = Tensor::randn(&[3, 2, 2], 1.0, &mut rng(2));
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let s = tape.softmax(v, 0).unwrap();
    let d = tape.value(s).data();
    for j in 0..4 {
        let total: f64 = (0..3).map(|i| d[i * 4 + j]).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn softmax_rejects_empty_axis() {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::zeros(&[2, 0]));
    assert!(tape.softmax(v, 1).is_err());
    assert!(tape.softmax(v, 3).is_err());
}

#[test]
fn softmax_family_gradients_match_finite_differences() {
    for seed in 0..10 {
        let x = Tensor::randn(&[3, 4], 1.5, &mut rng(seed));
        for axis in [0, 1] {
            let err = grad_check(
                |t, v| {
                    let y = t.log_softmax(v, axis)?;
                    probe(t, y, seed)
                },
                &x,
                FD_EPS,
            )
            .unwrap();
            assert!(err < 1e-6, "log_softmax seed {seed}: {err}");
            let err = grad_check(
                |t, v| {
                    let y = t.softmax(v, axis)?;
                    probe(t, y, seed)
                },
                &x,
                FD_EPS,
            )
            .unwrap();
            assert!(err < 1e-6, "softmax seed {seed}: {err}");
        }
    }
}

#[test]
fn shape_ops_gradients_match_finite_differences() {
    for seed in 0..10 {
        let a = Tensor::randn(&[2, 4, 3, 3], 1.0, &mut rng(seed));
        let b = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng(seed + 1));
        let w = Tensor::randn(&[5], 1.0, &mut rng(seed + 2));
        let err = grad_check_many(
            |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let r = t.relu(c);
                let n = t.narrow(r, 1, 1, 4)?;
                let p = t.permute_channels(n, &[2, 0, 3, 1])?;
                let m = t.mul_elem(p, v[2], 3)?;
                let s = t.spatial_mean(m)?;
                let q = t.add_n(&[s, s])?;
                let f = t.reshape(q, &[8])?;
                probe(t, f, seed)
            },
            &[a, b, w],
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn bias_affine_pick_ln_gradients_match_finite_differences() {
    for seed in 0..10 {
        let x = Tensor::uniform(&[3, 4], 0.1, 2.0, &mut rng(seed));
        let b = Tensor::randn(&[4], 0.1, &mut rng(seed + 1));
        let sc = Tensor::randn(&[3], 1.0, &mut rng(seed + 2));
        let sh = Tensor::randn(&[3], 1.0, &mut rng(seed + 3));
        let err = grad_check_many(
            |t, v| {
                let y = t.add_row_bias(v[0], v[1])?;
                let l = t.ln_clamped(y, 1e-12);
                let p = t.pick(l, &[0, 3, 1])?;
                let img = t.reshape(y, &[1, 3, 2, 2])?;
                let a = t.channel_affine(img, v[2], v[3])?;
                let s1 = probe(t, a, seed)?;
                let s2 = t.mean(p)?;
                t.add(s1, s2)
            },
            &[x, b, sc, sh],
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn pick_rejects_out_of_range_label() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        tape.pick(x, &[0, 3]),
        Err(Error::LabelOutOfRange {
            label: 3,
            index: 1,
            ..
        })
    ));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::randn(&[2, 3], 1.0, &mut rng(0)));
    let l = tape.sum(x);
    tape.backward(l).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_of_square() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 6.0);
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 12.0);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(..))));
}

#[test]
fn reused_tensor_accumulates_both_paths() {
    for seed in 0..10 {
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng(seed));
        let err = grad_check(
            |t, v| {
                let e = t.relu(v);
                let s = t.softmax(v, 1)?;
                let m = t.mul(e, s)?;
                let r = t.add(m, v)?;
                probe(t, r, seed)
            },
            &x,
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn two_cell_toy_network_gradients() {
    // stem conv -> normalize -> relu -> {sep-like, pool} cells -> classifier -> log-softmax NLL
    for seed in 0..3 {
        let mut r = rng(seed);
        let x = Tensor::randn(&[2, 1, 6, 6], 1.0, &mut r);
        let stem = Tensor::randn(&[4, 1, 3, 3], 0.5, &mut r);
        let dw = Tensor::randn(&[4, 1, 3, 3], 0.5, &mut r);
        let pw = Tensor::randn(&[4, 4, 1, 1], 0.5, &mut r);
        let fc = Tensor::randn(&[4, 3], 0.5, &mut r);
        let alpha = Tensor::randn(&[1, 2], 1.0, &mut r);
        let err = grad_check_many(
            |t, v| {
                let xin = t.constant(x.clone());
                let h = t.conv2d(
                    xin,
                    v[0],
                    ConvParams {
                        padding: 1,
                        ..Default::default()
                    },
                )?;
                let h = t.normalize(h, 1e-5)?;
                let h = t.relu(h);
                let dwp = ConvParams {
                    padding: 1,
                    groups: 4,
                    stride: 2,
                    dilation: 1,
                };
                let a = t.conv2d(h, v[1], dwp)?;
                let a = t.conv2d(a, v[2], ConvParams::default())?;
                let a = t.normalize(a, 1e-5)?;
                let pp = PoolParams {
                    window: 3,
                    stride: 2,
                    padding: 1,
                };
                let b = t.pool2d(PoolKind::Avg, h, pp)?;
                let w = t.softmax(v[4], 1)?;
                let a = t.mul_elem(a, w, 0)?;
                let b = t.mul_elem(b, w, 1)?;
                let c = t.add(a, b)?;
                let f = t.spatial_mean(c)?;
                let logits = t.matmul(f, v[3])?;
                let lp = t.log_softmax(logits, 1)?;
                let picked = t.pick(lp, &[0, 2])?;
                let m = t.mean(picked)?;
                Ok(t.scale(m, -1.0))
            },
            &[stem, dw, pw, fc, alpha],
            FD_EPS,
        )
        .unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn grad_check_quadratic_and_negative_control() {
    let x = Tensor::randn(&[5], 1.0, &mut rng(4));
    let err = grad_check(
        |t, v| {
            let sq = t.mul(v, v)?;
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");

    let value = |p: &Tensor| Ok(0.5 * p.data().iter().map(|v| v * v).sum::<f64>());
    let mut wrong = x.clone();
    wrong.data_mut()[2] += 0.5;
    let err = compare_gradient(value, &wrong, &x, 1e-5).unwrap();
    assert!(err > 1e-2, "{err}");
}

#[test]
fn grad_check_softmax_cross_entropy() {
    let x = Tensor::randn(&[4, 5], 1.0, &mut rng(8));
    let err = grad_check(
        |t, v| {
            let p = t.softmax(v, 1)?;
            let l = t.ln_clamped(p, 1e-12);
            let picked = t.pick(l, &[0, 4, 2, 1])?;
            let m = t.mean(picked)?;
            Ok(t.scale(m, -1.0))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn forward_on_finite_inputs_stays_finite() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::randn(&[2, 3, 4, 4], 50.0, &mut rng(5)));
    let s = tape.softmax(x, 1).unwrap();
    let l = tape.log_softmax(x, 1).unwrap();
    let n = tape.normalize(x, 1e-5).unwrap();
    let z = tape.ln_clamped(s, 1e-12);
    for v in [s, l, n, z] {
        assert!(tape.value(v).is_finite());
    }
}
