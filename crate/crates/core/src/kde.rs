//! Gaussian kernel density estimation on an interest grid.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{DensityVector, InterestGrid};
use crate::error::{invalid, Result};

/// How the bandwidth `h` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// `h = 1.06 σ̂ N^(-1/5)`, σ̂ the sample standard deviation.
    #[default]
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    /// Reflect the kernel mass that spills past `[lo, hi]` back inside.
    /// Off by default: estimates near the domain edges are left biased.
    pub reflect: Option<(f64, f64)>,
}

impl KdeConfig {
    pub fn fixed(h: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(h),
            reflect: None,
        }
    }

    pub fn silverman() -> Self {
        Self::default()
    }
}

/// Standard normal density.
pub fn gaussian_kernel(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("Silverman's rule needs at least two samples"));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let h = 1.06 * var.sqrt() * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return Err(invalid("Silverman's rule gives h = 0 for constant samples"));
    }
    Ok(h)
}

pub fn resolve_bandwidth(samples: &[f64], config: &KdeConfig) -> Result<f64> {
    match config.bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(invalid(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Silverman => silverman_bandwidth(samples),
    }
}

/// Evaluates `q(z) = (1/N) Σ_y (1/h) K((z - y) / h)` at every grid point.
pub fn kde_at(grid: &Arc<InterestGrid>, samples: &[f64], config: &KdeConfig) -> Result<DensityVector> {
    if samples.is_empty() {
        return Err(invalid("KDE needs at least one sample"));
    }
    let h = resolve_bandwidth(samples, config)?;
    let scale = 1.0 / (samples.len() as f64 * h);
    let reflect = config.reflect;
    let values: Vec<f64> = grid
        .points()
        .par_iter()
        .map(|&z| {
            let mut acc = 0.0;
            for &y in samples {
                acc += gaussian_kernel((z - y) / h);
                if let Some((lo, hi)) = reflect {
                    acc += gaussian_kernel((z - (2.0 * lo - y)) / h);
                    acc += gaussian_kernel((z - (2.0 * hi - y)) / h);
                }
            }
            acc * scale
        })
        .collect();
    DensityVector::new(Arc::clone(grid), values)
}
