//! Central finite-difference checks of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`, where
/// `numeric` is the central difference of `value` at `point`.
pub fn compare_gradient(
    value: impl Fn(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    point: &Tensor,
    eps: f64,
) -> Result<f64> {
    if analytic.shape() != point.shape() {
        return Err(Error::ShapeMismatch {
            op: "compare_gradient",
            left: analytic.shape().to_vec(),
            right: point.shape().to_vec(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = value(&probe)?;
        probe.data_mut()[i] = x0 - eps;
        let down = value(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Checks every input of a scalar-valued tape function; returns the worst
/// relative error across all inputs.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let mut worst: f64 = 0.0;
    for (slot, grad) in analytic.iter().enumerate() {
        let value = |probe: &Tensor| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = points
                .iter()
                .enumerate()
                .map(|(j, p)| t.constant(if j == slot { probe.clone() } else { p.clone() }))
                .collect();
            let l = f(&mut t, &vs)?;
            Ok(t.value(l).item())
        };
        worst = worst.max(compare_gradient(value, grad, &points[slot], eps)?);
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(point), eps)
}
