//! Utility measures: Wasserstein-1 between grid distributions, resampling
//! from a reconstructed density, and six summary statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DataRange, Dataset, DensityVector, InterestGrid};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct W1Options {
    /// Treat the values as masses as-is instead of converting densities to
    /// normalized cell masses.
    pub as_masses: bool,
    /// Weight each CDF gap by its cell width, giving the transport cost on
    /// the real line instead of on grid indices.
    pub scaled: bool,
}

/// `Σ_i |F_R(i) - F_S(i)|`, optionally weighted by `spacing[i]`.
pub fn wasserstein1_masses(r: &[f64], s: &[f64], spacing: Option<&[f64]>) -> Result<f64> {
    if r.len() != s.len() {
        return Err(invalid(format!("mass vectors differ in length: {} vs {}", r.len(), s.len())));
    }
    if let Some(w) = spacing {
        if w.len() != r.len() {
            return Err(invalid("spacing has the wrong length"));
        }
    }
    let mut cr = 0.0;
    let mut cs = 0.0;
    let mut total = 0.0;
    for i in 0..r.len() {
        cr += r[i];
        cs += s[i];
        let gap = (cr - cs).abs();
        total += match spacing {
            Some(w) => gap * w[i],
            None => gap,
        };
    }
    Ok(total)
}

pub fn wasserstein1(r: &DensityVector, s: &DensityVector, options: W1Options) -> Result<f64> {
    if !r.same_grid(s) {
        return Err(invalid("distributions are defined on different grids"));
    }
    let to_masses = |d: &DensityVector| -> Vec<f64> {
        if options.as_masses {
            d.values().to_vec()
        } else {
            let m = d.masses();
            let total: f64 = m.iter().sum();
            if total > 0.0 {
                m.iter().map(|x| x / total).collect()
            } else {
                m
            }
        }
    };
    let widths = r.grid().widths();
    let spacing = options.scaled.then_some(widths.as_slice());
    wasserstein1_masses(&to_masses(r), &to_masses(s), spacing)
}

/// Draws `count` values from the piecewise-linear interpolation of a
/// normalized density between its grid points.
pub fn resample<R: Rng + ?Sized>(density: &DensityVector, count: usize, rng: &mut R) -> Result<Dataset> {
    if !density.is_normalized(1e-6) {
        return Err(invalid(format!("density must have unit area, got {}", density.area())));
    }
    let grid = density.grid();
    let z = grid.points();
    let v = density.values();
    let m = z.len();

    if m == 1 {
        let range = DataRange::new(z[0], grid.auxiliary())?;
        let values = (0..count).map(|_| rng.gen_range(z[0]..grid.auxiliary())).collect();
        return Dataset::new(values, range);
    }

    let seg_mass: Vec<f64> = (0..m - 1).map(|i| 0.5 * (v[i] + v[i + 1]) * (z[i + 1] - z[i])).collect();
    let mut cdf = Vec::with_capacity(m - 1);
    let mut acc = 0.0;
    for w in &seg_mass {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(invalid("density has no mass between its grid points"));
    }

    let range = DataRange::new(z[0], z[m - 1])?;
    let values = (0..count)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let seg = cdf.partition_point(|c| *c <= u).min(m - 2);
            let before = if seg == 0 { 0.0 } else { cdf[seg - 1] };
            let target = (u - before).clamp(0.0, seg_mass[seg]);
            let (f0, f1) = (v[seg], v[seg + 1]);
            let h = z[seg + 1] - z[seg];
            // Solve f0 t + (f1 - f0) t² / (2h) = target for t ∈ [0, h].
            let disc = (f0 * f0 + 2.0 * (f1 - f0) * target / h).max(0.0);
            let denom = f0 + disc.sqrt();
            let t = if denom > 0.0 { 2.0 * target / denom } else { 0.0 };
            (z[seg] + t.clamp(0.0, h)).clamp(z[seg], z[seg + 1])
        })
        .collect();
    Dataset::new(values, range)
}

/// Mean, standard deviation, mode, median, skewness and kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub mean: f64,
    pub std_dev: f64,
    pub mode: f64,
    pub median: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl IndicatorSet {
    pub fn abs_diff(&self, other: &IndicatorSet) -> IndicatorSet {
        IndicatorSet {
            mean: (self.mean - other.mean).abs(),
            std_dev: (self.std_dev - other.std_dev).abs(),
            mode: (self.mode - other.mode).abs(),
            median: (self.median - other.median).abs(),
            skewness: (self.skewness - other.skewness).abs(),
            kurtosis: (self.kurtosis - other.kurtosis).abs(),
        }
    }
}

/// Midpoint of the most populated grid cell `[z_i, z_{i+1})`; the smallest
/// midpoint wins ties.
fn histogram_mode(data: &[f64], grid: &InterestGrid) -> f64 {
    let z = grid.points();
    let m = z.len();
    let upper = |i: usize| if i + 1 < m { z[i + 1] } else { grid.auxiliary() };
    let mut counts = vec![0usize; m];
    for &x in data {
        if x < z[0] || x > grid.auxiliary() {
            continue;
        }
        let i = z.partition_point(|p| *p <= x).saturating_sub(1).min(m - 1);
        counts[i] += 1;
    }
    let mut best = 0;
    for i in 1..m {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    0.5 * (z[best] + upper(best))
}

/// Summary statistics of raw data. The mode is a histogram mode over
/// `grid`'s cells, or over 100 equal cells spanning the data when no grid is
/// given.
///
/// Conventions: standard deviation with the `n - 1` denominator, median as
/// the midpoint of the two central values for even `n`, adjusted
/// Fisher-Pearson skewness, Pearson (non-excess) kurtosis. Zero-variance data
/// has skewness and kurtosis 0.
pub fn indicators(data: &[f64], grid: Option<&InterestGrid>) -> Result<IndicatorSet> {
    let n = data.len();
    if n == 0 {
        return Err(invalid("indicators need at least one value"));
    }
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in data {
        let dev = x - mean;
        let sq = dev * dev;
        m2 += sq;
        m3 += sq * dev;
        m4 += sq * sq;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;

    let std_dev = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
    let (skewness, kurtosis) = if m2 > 0.0 {
        let g1 = m3 / m2.powf(1.5);
        let skew = if n > 2 { g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0) } else { g1 };
        (skew, m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };

    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let mode = match grid {
        Some(g) => histogram_mode(data, g),
        None if hi > lo => {
            let cells = 100;
            let step = (hi - lo) / cells as f64;
            let pts: Vec<f64> = (0..cells).map(|i| lo + step * i as f64).collect();
            histogram_mode(data, &InterestGrid::new(pts, hi + 1e-12 * (1.0 + hi.abs()))?)
        }
        None => lo,
    };

    Ok(IndicatorSet {
        mean,
        std_dev,
        mode,
        median,
        skewness,
        kurtosis,
    })
}

/// Resamples `count` values from `estimated` and returns the absolute
/// indicator differences; both modes use `estimated`'s grid.
pub fn indicator_error<R: Rng + ?Sized>(
    original: &Dataset,
    estimated: &DensityVector,
    count: usize,
    rng: &mut R,
) -> Result<IndicatorSet> {
    if count == 0 {
        return Err(invalid("resample count must be at least 1"));
    }
    let resampled = resample(estimated, count, rng)?;
    let grid = estimated.grid();
    let a = indicators(original.values(), Some(grid))?;
    let b = indicators(resampled.values(), Some(grid))?;
    Ok(a.abs_diff(&b))
}
