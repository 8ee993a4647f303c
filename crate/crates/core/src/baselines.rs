//! Noise-addition baselines: each user reports `x + η` with Laplace or
//! Gaussian `η`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::euclidean_distance;
use crate::domain::{DataRange, Dataset};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Laplace,
    Gaussian,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Laplace => "laplace",
            Mechanism::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Mechanism::Laplace),
            "gaussian" => Ok(Mechanism::Gaussian),
            other => Err(invalid(format!("unknown mechanism `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub mechanism: Mechanism,
    /// Laplace `b` or Gaussian `σ`, in data units.
    pub scale: f64,
    pub clip_to_range: bool,
}

impl NoiseConfig {
    pub fn new(mechanism: Mechanism, scale: f64, clip_to_range: bool) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("noise scale must be positive, got {scale}")));
        }
        Ok(Self {
            mechanism,
            scale,
            clip_to_range,
        })
    }
}

/// One draw of unit-scale noise; the reported value is `x + scale · ξ`.
fn unit_noise<R: Rng + ?Sized>(mechanism: Mechanism, rng: &mut R) -> f64 {
    match mechanism {
        Mechanism::Laplace => {
            let u: f64 = rng.sample::<f64, _>(rand::distributions::Open01) - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
        Mechanism::Gaussian => rng.sample(StandardNormal),
    }
}

pub fn perturb_noise<R: Rng + ?Sized>(x: f64, config: &NoiseConfig, range: DataRange, rng: &mut R) -> f64 {
    let y = x + config.scale * unit_noise(config.mechanism, rng);
    if config.clip_to_range {
        y.clamp(range.lower(), range.upper())
    } else {
        y
    }
}

/// Noisy copy of every value, in order. Values may leave `[a, b]` unless
/// clipping is enabled.
pub fn perturb_noise_dataset<R: Rng + ?Sized>(data: &Dataset, config: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    data.values()
        .iter()
        .map(|x| perturb_noise(*x, config, data.range(), rng))
        .collect()
}

/// Euclidean distance between the private values and their noisy reports.
pub fn baseline_privacy(original: &Dataset, perturbed: &[f64]) -> Result<f64> {
    euclidean_distance(original.values(), perturbed)
}

/// Finds by bisection the noise scale whose privacy distance on `data` is
/// within `rel_tol` of `target`. The noise stream is reseeded from `seed` for
/// every probe, so the distance is monotone in the scale.
pub fn match_scale(
    data: &Dataset,
    mechanism: Mechanism,
    clip_to_range: bool,
    target: f64,
    seed: u64,
    rel_tol: f64,
) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(invalid(format!("target distance must be positive, got {target}")));
    }
    let distance = |scale: f64| -> Result<f64> {
        let cfg = NoiseConfig::new(mechanism, scale, clip_to_range)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        baseline_privacy(data, &perturb_noise_dataset(data, &cfg, &mut rng))
    };

    let mut lo = 1e-9;
    let mut hi = 1.0;
    let mut grow = 0;
    while distance(hi)? < target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(invalid(format!("no noise scale reaches distance {target}")));
        }
    }
    let mut best = hi;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let dist = distance(mid)?;
        if (dist - target).abs() <= rel_tol * target {
            return Ok(mid);
        }
        if dist < target {
            lo = mid;
        } else {
            hi = mid;
            best = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range() -> DataRange {
        DataRange::new(0.0, 10.0).unwrap()
    }

    #[test]
    fn tiny_scale_returns_input() {
        let cfg = NoiseConfig::new(Mechanism::Laplace, 1e-12, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!((perturb_noise(3.0, &cfg, range(), &mut rng) - 3.0).abs() < 1e-9);
        }
        assert!(NoiseConfig::new(Mechanism::Gaussian, 0.0, false).is_err());
    }

    #[test]
    fn laplace_moments() {
        let cfg = NoiseConfig::new(Mechanism::Laplace, 2.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let noise: Vec<f64> = (0..n).map(|_| perturb_noise(5.0, &cfg, range(), &mut rng) - 5.0).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let mean_abs = noise.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((mean_abs - 2.0).abs() <= 0.01, "E|η| {mean_abs}");
    }

    #[test]
    fn gaussian_std() {
        let cfg = NoiseConfig::new(Mechanism::Gaussian, 1.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let noise: Vec<f64> = (0..n).map(|_| perturb_noise(5.0, &cfg, range(), &mut rng) - 5.0).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let var = noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 1.0).abs() <= 0.005);
    }

    #[test]
    fn clipping_keeps_range() {
        let cfg = NoiseConfig::new(Mechanism::Laplace, 50.0, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..1000).all(|_| range().contains(perturb_noise(5.0, &cfg, range(), &mut rng))));
    }

    #[test]
    fn privacy_of_known_noise() {
        let d = Dataset::new(vec![1.0, 1.0], range()).unwrap();
        assert_eq!(baseline_privacy(&d, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(baseline_privacy(&d, &[4.0, 5.0]).unwrap(), 5.0);
    }

    #[test]
    fn distance_grows_with_scale() {
        let d = Dataset::new((0..500).map(|i| i as f64 / 50.0).collect(), range()).unwrap();
        let mean_distance = |scale: f64| {
            let cfg = NoiseConfig::new(Mechanism::Laplace, scale, false).unwrap();
            (0..11)
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
                    baseline_privacy(&d, &perturb_noise_dataset(&d, &cfg, &mut rng)).unwrap()
                })
                .sum::<f64>()
                / 11.0
        };
        let ds: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|s| mean_distance(*s)).collect();
        assert!(ds.windows(2).all(|w| w[0] < w[1]), "{ds:?}");
    }

    #[test]
    fn matched_scale_hits_target() {
        let d = Dataset::new((0..2000).map(|i| (i % 100) as f64 / 10.0).collect(), range()).unwrap();
        for (mech, clip) in [(Mechanism::Laplace, false), (Mechanism::Gaussian, false), (Mechanism::Laplace, true)] {
            let target = 60.0;
            let scale = match_scale(&d, mech, clip, target, 9, 1e-4).unwrap();
            let cfg = NoiseConfig::new(mech, scale, clip).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let got = baseline_privacy(&d, &perturb_noise_dataset(&d, &cfg, &mut rng)).unwrap();
            assert!((got - target).abs() <= 0.02 * target, "{mech:?}: {got}");
        }
    }
}
