use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_SEVERITY: usize = 5;

/// Contrast reduction by `1 - 0.06 s` about each image's mean, then Gaussian
/// noise with std `0.05 s`, clipped to `[0, 1]`. Severity 0 returns the input.
pub fn apply_shift(images: &Tensor, severity: usize, seed: u64) -> Result<Tensor> {
    if severity > MAX_SEVERITY {
        return Err(Error::invalid(
            "apply_shift",
            format!("severity {severity} outside 0..={MAX_SEVERITY}"),
        ));
    }
    if severity == 0 {
        return Ok(images.clone());
    }
    let n = images.shape().first().copied().unwrap_or(0);
    let per = if n == 0 { 0 } else { images.numel() / n };
    let s = severity as f64;
    let (contrast, std) = (1.0 - 0.06 * s, 0.05 * s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = images.clone();
    for img in out.data_mut().chunks_mut(per.max(1)) {
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        for v in img.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (mean + (*v - mean) * contrast + std * noise).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
