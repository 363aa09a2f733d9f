use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::search::{SearchHook, SearchState};

pub const EIG_TOL: f64 = 1e-6;
pub const EIG_MAX_ITER: usize = 200;
/// Size of the fixed validation batch used for Hessian probes.
pub const PROBE_BATCH: usize = 256;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Finite-difference step for a probe at `alpha`: `1e-3 (1 + |alpha|)`.
pub fn fd_eps(alpha: &[f64]) -> f64 {
    1e-3 * (1.0 + norm(alpha))
}

/// Hessian-vector product by central differences of the gradient along `v / |v|`,
/// scaled back by `|v|`.
pub fn hvp_fd<F>(mut grad: F, alpha: &[f64], v: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if alpha.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "hvp_fd",
            left: vec![alpha.len()],
            right: vec![v.len()],
        });
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid(
            "hvp_fd",
            "direction must be a non-zero finite vector",
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("hvp_fd", "step must be positive"));
    }
    let shifted = |sign: f64| -> Vec<f64> {
        alpha
            .iter()
            .zip(v)
            .map(|(a, d)| a + sign * eps * d / n)
            .collect()
    };
    let up = grad(&shifted(1.0))?;
    let down = grad(&shifted(-1.0))?;
    if up.len() != alpha.len() || down.len() != alpha.len() {
        return Err(Error::invalid(
            "hvp_fd",
            "gradient length differs from the parameter length",
        ));
    }
    Ok(up
        .iter()
        .zip(&down)
        .map(|(u, d)| (u - d) / (2.0 * eps) * n)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigEstimate {
    /// Rayleigh quotient of the returned eigenvector estimate.
    pub value: f64,
    /// `|Hv - value v|` for the unit estimate `v`.
    pub residual: f64,
    /// Operator applications used.
    pub iters: usize,
    pub converged: bool,
}

/// Largest-magnitude eigenvalue of the symmetric operator `hvp` on `R^dim`.
///
/// Power iteration from a seeded Gaussian start, accelerated by keeping the
/// whole Krylov basis (Lanczos with full reorthogonalization): the estimate
/// after `k` products is the extreme Ritz value of the first `k` power
/// iterates. Stops once the residual bound drops below `tol`, the Krylov
/// space is exhausted, or `max_iter` products were spent; the final Rayleigh
/// quotient and residual are measured with one more product. Non-convergence
/// is reported through `converged`, not as an error.
pub fn dominant_eig<F>(
    mut hvp: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::invalid(
            "dominant_eig",
            "dimension must be at least 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&q);
    q.iter_mut().for_each(|x| *x /= n0);

    let mut apply = |x: &[f64]| -> Result<Vec<f64>> {
        let y = hvp(x)?;
        if y.len() != dim {
            return Err(Error::invalid(
                "dominant_eig",
                format!("operator returned {} values, expected {dim}", y.len()),
            ));
        }
        Ok(y)
    };

    let limit = max_iter.max(1).min(dim);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let (mut diag, mut off): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut iters = 0;
    let mut ritz = vec![1.0];
    loop {
        let k = basis.len() - 1;
        let mut w = apply(&basis[k])?;
        iters += 1;
        let a = dot(&basis[k], &w);
        diag.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let beta = norm(&w);
        let t = DMatrix::from_fn(diag.len(), diag.len(), |i, j| {
            if i == j {
                diag[i]
            } else if i + 1 == j {
                off[i]
            } else if j + 1 == i {
                off[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut best = 0;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i].abs() > eig.eigenvalues[best].abs() {
                best = i;
            }
        }
        ritz = eig.eigenvectors.column(best).iter().copied().collect();
        let bound = beta * ritz[ritz.len() - 1].abs();
        let scale = diag.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1.0);
        if bound < tol || beta <= 1e-14 * scale || basis.len() >= limit {
            break;
        }
        off.push(beta);
        basis.push(w.into_iter().map(|x| x / beta).collect());
    }

    let mut v = vec![0.0; dim];
    for (s, b) in ritz.iter().zip(&basis) {
        v.iter_mut().zip(b).for_each(|(vi, bi)| *vi += s * bi);
    }
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let hv = apply(&v)?;
    iters += 1;
    let value = dot(&v, &hv);
    let residual = hv
        .iter()
        .zip(&v)
        .map(|(h, x)| (h - value * x).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(EigEstimate {
        value,
        residual,
        iters,
        converged: residual < tol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigRow {
    pub epoch: usize,
    pub eig: f64,
    pub residual: f64,
    pub iters: usize,
}

/// Per-epoch dominant eigenvalue of the architecture Hessian of the
/// validation objective. Attach to a continuous search as its hook.
#[derive(Clone, Debug)]
pub struct EigTrace {
    pub rows: Vec<EigRow>,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    batch: Option<Split>,
}

impl EigTrace {
    pub fn new(lambda: f64, seed: u64) -> Self {
        EigTrace {
            rows: Vec::new(),
            lambda,
            tol: EIG_TOL,
            max_iter: EIG_MAX_ITER,
            seed,
            batch: None,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Estimates the dominant eigenvalue of the Hessian of the loss whose
    /// gradient is `grad`, at `alpha`, and records it for `epoch`.
    pub fn probe<F>(&mut self, epoch: usize, alpha: &[f64], mut grad: F) -> Result<EigEstimate>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let eps = fd_eps(alpha);
        let est = dominant_eig(
            |v| hvp_fd(&mut grad, alpha, v, eps),
            alpha.len(),
            self.tol,
            self.max_iter,
            self.seed,
        )?;
        if !est.value.is_finite() {
            return Err(Error::invalid(
                "EigTrace",
                format!("non-finite eigenvalue at epoch {epoch}"),
            ));
        }
        self.rows.push(EigRow {
            epoch,
            eig: est.value,
            residual: est.residual,
            iters: est.iters,
        });
        Ok(est)
    }

    /// Rows whose residual did not reach the tolerance.
    pub fn flagged(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| !(r.residual < self.tol))
            .map(|r| r.epoch)
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "eig", "residual", "iters"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.eig.to_string(),
                r.residual.to_string(),
                r.iters.to_string(),
            ])?;
        }
        super::finish_csv(w)
    }
}

impl SearchHook for EigTrace {
    fn after_epoch(&mut self, epoch: usize, state: &SearchState, val: &Split) -> Result<()> {
        let Some(arch) = state.arch.as_ref() else {
            return Err(Error::invalid(
                "EigTrace",
                "search has no continuous architecture",
            ));
        };
        let batch = self
            .batch
            .get_or_insert_with(|| val.slice(0, PROBE_BATCH.min(val.len())))
            .clone();
        let (lambda, noise) = (self.lambda, self.seed);
        let mut probe = arch.clone();
        let alpha = arch.flatten();
        self.probe(epoch, &alpha, |a| {
            probe.set_flat(a)?;
            Ok(state.arch_loss_grad(&probe, &batch, lambda, noise)?.1)
        })?;
        Ok(())
    }
}
