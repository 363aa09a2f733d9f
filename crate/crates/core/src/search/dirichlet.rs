//! Reparameterized Gamma / Dirichlet sampling.
//!
//! Gamma draws use Marsaglia and Tsang's method on shape `a + BOOST`, mapped
//! back to shape `a` with `BOOST` uniform factors. The pathwise derivative
//! treats the accepted normal and uniforms as fixed noise.

use rand::Rng;
use rand_distr::StandardNormal;

pub const BOOST: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaDraw {
    pub log_value: f64,
    /// `d log g / d a` along the sampling path.
    pub dlog_dshape: f64,
}

/// One `Gamma(a, 1)` draw (`a > 0`) in log space.
pub fn sample_log_gamma<R: Rng + ?Sized>(a: f64, rng: &mut R) -> GammaDraw {
    debug_assert!(a > 0.0);
    let shape = a + BOOST as f64;
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let (x, v) = loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            break (x, v);
        }
    };
    let t = 1.0 + c * x;
    let h = d * v;
    let mut log_value = h.ln();
    let mut dlog = (v - 1.5 * c * x * t * t) / h;
    for i in 0..BOOST {
        let u: f64 = 1.0 - rng.random::<f64>();
        let ai = a + i as f64;
        log_value += u.ln() / ai;
        dlog -= u.ln() / (ai * ai);
    }
    GammaDraw {
        log_value,
        dlog_dshape: dlog,
    }
}

/// Log-Gamma draws for every concentration: `softmax(log_values)` is a
/// Dirichlet sample.
pub fn sample_dirichlet_logits<R: Rng + ?Sized>(
    alpha: &[f64],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    alpha
        .iter()
        .map(|&a| {
            let g = sample_log_gamma(a, rng);
            (g.log_value, g.dlog_dshape)
        })
        .unzip()
}

/// A Dirichlet sample on the simplex.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let (logits, _) = sample_dirichlet_logits(alpha, rng);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
