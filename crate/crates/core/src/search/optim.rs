use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `eta0 * (1 + cos(pi t / total)) / 2`.
pub fn cosine_lr(t: usize, total: usize, eta0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine_lr", "total must be positive"));
    }
    if t > total {
        return Err(Error::invalid(
            "cosine_lr",
            format!("step {t} beyond total {total}"),
        ));
    }
    Ok(eta0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

fn check_shapes(op: &'static str, params: &[Tensor], grads: &[Option<Tensor>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(
            op,
            format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op,
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v = mu v + (g + wd w)`, `w -= lr v`.
///
/// Parameters whose gradient is `None` are left untouched.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        check_shapes("sgd_step", params, grads)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        } else if self.velocity.len() != params.len()
            || self
                .velocity
                .iter()
                .zip(params.iter())
                .any(|(v, p)| v.len() != p.numel())
        {
            return Err(Error::invalid(
                "sgd_step",
                "optimizer state does not match parameters",
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        check_shapes("adam_step", params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::invalid(
                "adam_step",
                "optimizer state does not match parameters",
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi + self.weight_decay * *w;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gi;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
