use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are clamped here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `F = (1/M) sum_i f_i`.
pub fn ensemble_mean(tape: &mut Tape, heads: &[Var]) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::invalid("ensemble_mean", "no heads"));
    }
    let s = tape.add_n(heads)?;
    Ok(tape.scale(s, 1.0 / heads.len() as f64))
}

/// Batch mean of `-ln p_y`.
fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let p = tape.pick(probs, labels)?;
    let l = tape.ln_clamped(p, PROB_FLOOR);
    let m = tape.mean(l)?;
    Ok(tape.scale(m, -1.0))
}

/// `sum_i l(f_i, y) + l(F, y)`, every term averaged over the batch.
pub fn ensemble_train_loss(tape: &mut Tape, heads: &[Var], labels: &[usize]) -> Result<Var> {
    let f = ensemble_mean(tape, heads)?;
    let mut terms = Vec::with_capacity(heads.len() + 1);
    for &h in heads.iter().chain([&f]) {
        terms.push(cross_entropy(tape, h, labels)?);
    }
    tape.add_n(&terms)
}

/// Mean over heads of `KL(F || f_i)`, averaged over the batch.
pub fn jsd_diversity(tape: &mut Tape, heads: &[Var]) -> Result<Var> {
    let f = ensemble_mean(tape, heads)?;
    if heads.len() == 1 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = tape.shape(f).first().copied().unwrap_or(1).max(1);
    let ln_f = tape.ln_clamped(f, PROB_FLOOR);
    let mut terms = Vec::with_capacity(heads.len());
    for &h in heads {
        let ln_h = tape.ln_clamped(h, PROB_FLOOR);
        let d = tape.sub(ln_f, ln_h)?;
        let kl = tape.mul(f, d)?;
        terms.push(tape.sum(kl));
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, 1.0 / (heads.len() * n) as f64))
}

/// `L_train - lambda * L_jsd`, both on the same (validation) batch.
pub fn arch_val_loss(tape: &mut Tape, heads: &[Var], labels: &[usize], lambda: f64) -> Result<Var> {
    let l = ensemble_train_loss(tape, heads, labels)?;
    if lambda == 0.0 {
        return Ok(l);
    }
    let j = jsd_diversity(tape, heads)?;
    let j = tape.scale(j, -lambda);
    tape.add(l, j)
}

/// The ensemble loss with label-smoothed targets `(1-s) onehot(y) + s/C`.
pub fn smoothed_ensemble_loss(
    tape: &mut Tape,
    heads: &[Var],
    labels: &[usize],
    smoothing: f64,
) -> Result<Var> {
    if smoothing == 0.0 {
        return ensemble_train_loss(tape, heads, labels);
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(
            "smoothed_ensemble_loss",
            format!("smoothing {smoothing} outside [0, 1)"),
        ));
    }
    let f = ensemble_mean(tape, heads)?;
    let shape = tape.shape(f).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let mut q = vec![smoothing / c as f64; n * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
                index: i,
            });
        }
        q[i * c + y] += 1.0 - smoothing;
    }
    let q = tape.constant(Tensor::new(shape, q)?);
    let mut terms = Vec::with_capacity(heads.len() + 1);
    for &h in heads.iter().chain([&f]) {
        let l = tape.ln_clamped(h, PROB_FLOOR);
        let w = tape.mul(q, l)?;
        let s = tape.sum(w);
        terms.push(tape.scale(s, -1.0 / n as f64));
    }
    tape.add_n(&terms)
}
