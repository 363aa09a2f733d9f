use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Provenance, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_size() -> usize {
    16
}

fn default_noise() -> f64 {
    0.15
}

impl SyntheticSpec {
    pub fn new(classes: usize, n_train: usize, n_val: usize, n_test: usize) -> Self {
        SyntheticSpec {
            classes,
            n_train,
            n_val,
            n_test,
            size: default_size(),
            noise: default_noise(),
        }
    }
}

/// Orientation and spatial frequency (cycles per image) of class `k`.
fn class_params(k: usize, classes: usize) -> (f64, f64) {
    let angle = PI * k as f64 / classes as f64;
    let freq = 2.0 + (k % 3) as f64;
    (angle, freq)
}

fn stripe(size: usize, angle: f64, freq: f64, phase: f64, amplitude: f64, out: &mut [f64]) {
    let c = (size as f64 - 1.0) / 2.0;
    let sigma = size as f64 / 3.0;
    let (sa, ca) = angle.sin_cos();
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 - c, j as f64 - c);
            let u = x * ca + y * sa;
            let env = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            out[i * size + j] =
                0.5 + amplitude * env * (2.0 * PI * freq * u / size as f64 + phase).cos();
        }
    }
}

/// Noise-free pattern of class `k`: a Gaussian-windowed oriented stripe.
pub fn class_template(k: usize, classes: usize, size: usize) -> Vec<f64> {
    let (angle, freq) = class_params(k, classes);
    let mut out = vec![0.0; size * size];
    stripe(size, angle, freq, 0.0, 0.35, &mut out);
    out
}

fn gen_split(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Split {
    let s = spec.size;
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(rng);
    let mut data = vec![0.0; n * s * s];
    for (img, &y) in data.chunks_mut(s * s).zip(&labels) {
        let (angle, freq) = class_params(y, spec.classes);
        let phase = rng.random_range(-PI / 4.0..PI / 4.0);
        let amplitude = rng.random_range(0.25..0.45);
        stripe(s, angle, freq, phase, amplitude, img);
        for v in img.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = (*v + spec.noise * e).clamp(0.0, 1.0);
        }
    }
    Split {
        images: Tensor::new(vec![n, 1, s, s], data).expect("consistent shape"),
        labels,
    }
}

/// Deterministic balanced dataset of noisy oriented stripe patterns.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<DatasetBundle> {
    if spec.classes < 2 {
        return Err(Error::invalid("gen_synthetic", "need at least 2 classes"));
    }
    if spec.size < 8 {
        return Err(Error::invalid(
            "gen_synthetic",
            "images must be at least 8 pixels wide",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = gen_split(spec, spec.n_train, &mut rng);
    let val = gen_split(spec, spec.n_val, &mut rng);
    let test = gen_split(spec, spec.n_test, &mut rng);
    Ok(DatasetBundle {
        classes: spec.classes,
        train,
        val,
        test,
        provenance: Provenance::Synthetic { seed },
    })
}
