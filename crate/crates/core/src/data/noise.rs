use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PfnError, Result};
use crate::tensor::RgbImage;

/// Additive Gaussian noise `N(mu, sigma2)` on the `[0, 1]` intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu: f64,
    /// Variance, not standard deviation.
    pub sigma2: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma2: f64, seed: u64) -> Self {
        Self {
            mu: 0.0,
            sigma2,
            seed,
        }
    }
}

/// Adds i.i.d. per-pixel, per-channel noise and clips to `[0, 1]`.
pub fn add_gaussian_noise(image: &RgbImage, spec: &NoiseSpec) -> Result<RgbImage> {
    if !(spec.sigma2 >= 0.0 && spec.sigma2.is_finite()) || !spec.mu.is_finite() {
        return Err(PfnError::InvalidArgument(format!(
            "noise needs finite mu and sigma2 >= 0, got mu = {}, sigma2 = {}",
            spec.mu, spec.sigma2
        )));
    }
    if spec.sigma2 == 0.0 && spec.mu == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(spec.mu, spec.sigma2.sqrt())
        .map_err(|e| PfnError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(image.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_identity() {
        let img = RgbImage::from_fn(3, 4, 4, |c, y, x| ((c + y + x) % 3) as f64 / 2.0);
        assert_eq!(add_gaussian_noise(&img, &NoiseSpec::new(0.0, 1)).unwrap(), img);
    }

    #[test]
    fn deterministic_and_clipped() {
        let img = RgbImage::filled(3, 16, 16, 0.95);
        let s = NoiseSpec::new(0.05, 3);
        let a = add_gaussian_noise(&img, &s).unwrap();
        assert_eq!(a, add_gaussian_noise(&img, &s).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(add_gaussian_noise(&img, &NoiseSpec::new(-1.0, 3)).is_err());
    }

    #[test]
    fn residual_statistics_on_mid_gray() {
        // n = 512 * 512 samples in one channel-plane worth of pixels.
        let img = RgbImage::filled(1, 512, 512, 0.5);
        for sigma2 in [1e-4, 1e-3] {
            let noisy = add_gaussian_noise(&img, &NoiseSpec::new(sigma2, 42)).unwrap();
            let n = 512.0 * 512.0;
            let res: Vec<f64> = noisy.data().iter().map(|v| v - 0.5).collect();
            let mean = res.iter().sum::<f64>() / n;
            let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 4.0 * (sigma2 / n).sqrt(), "mean {mean}");
            assert!((var - sigma2).abs() < 0.05 * sigma2, "var {var}");
        }
    }
}
