//! Client-side negative-survey perturbation.
//!
//! A user holding `x` draws an offset `d1` and refuses to report anything in
//! the prohibited band `[x - d1, x + d - d1]`. The band always has width `d`
//! and always stays inside `[a, b]`, so the offset is drawn uniformly from the
//! feasible interval `[max(0, x + d - b), min(d, x - a)]`:
//!
//! ```text
//! interior     (x - a >= d, b - x >= d)   d1 ~ U[0, d]
//! left edge    (x - a <  d)               d1 ~ U[0, x - a]
//! right edge   (b - x <  d)               d1 ~ U[x + d - b, d]   (d - d1 ~ U[0, b - x])
//! ```
//!
//! The `k` reported samples are then drawn uniformly from the remaining set
//! `[a, x - d1) ∪ (x + d - d1, b]`, whose total length is always `b - a - d`.
//! Marginalizing over `d1` gives the piecewise-linear kernel `p(x, y)`
//! implemented by [`kernel_density`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, PerturbationConfig, PerturbedReport};
use crate::error::{invalid, Result};

/// Position of the prohibited band relative to the domain edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandPlacement {
    /// `a <= x < a + d`: the band is pinned against `a`.
    LeftEdge,
    /// `a + d <= x <= b - d`: the band floats freely around `x`.
    Interior,
    /// `b - d < x <= b`: the band is pinned against `b`.
    RightEdge,
    /// Both edges constrain the band; only possible when `d > (b - a) / 2`.
    BothEdges,
}

pub fn band_placement(x: f64, config: &PerturbationConfig) -> BandPlacement {
    let r = config.range();
    let d = config.band_width();
    let near_left = x - r.lower() < d;
    let near_right = r.upper() - x < d;
    match (near_left, near_right) {
        (true, true) => BandPlacement::BothEdges,
        (true, false) => BandPlacement::LeftEdge,
        (false, false) => BandPlacement::Interior,
        (false, true) => BandPlacement::RightEdge,
    }
}

/// Feasible interval `[lo, hi]` for the band offset `d1`.
pub fn offset_bounds(x: f64, config: &PerturbationConfig) -> (f64, f64) {
    let r = config.range();
    let d = config.band_width();
    match band_placement(x, config) {
        BandPlacement::Interior => (0.0, d),
        BandPlacement::LeftEdge => (0.0, x - r.lower()),
        BandPlacement::RightEdge => (x + d - r.upper(), d),
        BandPlacement::BothEdges => (x + d - r.upper(), x - r.lower()),
    }
}

fn check_value(x: f64, config: &PerturbationConfig) -> Result<()> {
    let r = config.range();
    if !r.contains(x) {
        return Err(invalid(format!(
            "value {x} lies outside [{}, {}]",
            r.lower(),
            r.upper()
        )));
    }
    Ok(())
}

/// Perturbs one private value into `k` samples outside a randomized band.
pub fn perturb<R: Rng + ?Sized>(
    user_id: impl Into<String>,
    x: f64,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<PerturbedReport> {
    check_value(x, config)?;
    let r = config.range();
    let d = config.band_width();

    let (lo, hi) = offset_bounds(x, config);
    let d1 = lo + (hi - lo) * rng.gen::<f64>();

    let band_lo = x - d1;
    let band_hi = x + d - d1;
    let left_len = (band_lo - r.lower()).max(0.0);
    let total = r.width() - d;

    let samples = (0..config.samples_per_user())
        .map(|_| {
            let u: f64 = rng.sample::<f64, _>(rand::distributions::Open01) * total;
            let y = if u < left_len {
                r.lower() + u
            } else {
                band_hi + (u - left_len)
            };
            y.clamp(r.lower(), r.upper())
        })
        .collect();

    Ok(PerturbedReport {
        user_id: user_id.into(),
        samples,
        band_offset: d1,
    })
}

/// Perturbs every value of a dataset in order, labelling users `0..n`.
pub fn perturb_dataset<R: Rng + ?Sized>(
    data: &Dataset,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<Vec<PerturbedReport>> {
    data.values()
        .iter()
        .enumerate()
        .map(|(i, x)| perturb(i.to_string(), *x, config, rng))
        .collect()
}

/// Density `p(x, y)` of reporting `y` when the private value is `x`.
pub fn kernel_density(x: f64, y: f64, config: &PerturbationConfig) -> Result<f64> {
    check_value(x, config)?;
    check_value(y, config)?;
    Ok(kernel_unchecked(x, y, config))
}

/// [`kernel_density`] without the domain checks; callers guarantee
/// `x, y ∈ [a, b]`.
pub(crate) fn kernel_unchecked(x: f64, y: f64, config: &PerturbationConfig) -> f64 {
    let r = config.range();
    let (a, b) = (r.lower(), r.upper());
    let d = config.band_width();
    let c = 1.0 / (b - a - d);

    // Branches are tested in the order the cases are written; ties on a
    // breakpoint therefore fall to the earlier branch.
    match band_placement(x, config) {
        BandPlacement::LeftEdge => {
            if y >= x && y <= a + d {
                0.0
            } else if y > x + d {
                c
            } else if y < x {
                (x - y) / (x - a) * c
            } else {
                (y - a - d) / (x - a) * c
            }
        }
        BandPlacement::Interior => {
            if y == x {
                0.0
            } else if y < x - d || y > x + d {
                c
            } else if y < x {
                (x - y) / d * c
            } else {
                (y - x) / d * c
            }
        }
        BandPlacement::RightEdge => {
            if y >= b - d && y <= x {
                0.0
            } else if y < x - d {
                c
            } else if y < b - d {
                (b - d - y) / (b - x) * c
            } else {
                (y - x) / (b - x) * c
            }
        }
        BandPlacement::BothEdges => {
            // y is excluded exactly when d1 ∈ [x - y, x + d - y].
            let (lo, hi) = offset_bounds(x, config);
            let overlap = ((x + d - y).min(hi) - (x - y).max(lo)).max(0.0);
            c * (1.0 - overlap / (hi - lo))
        }
    }
}

/// Local differential privacy budget `ε = k ln(4d / δ)` for output
/// neighborhoods of half-width `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpBudget {
    pub epsilon: f64,
    pub delta_neighborhood: f64,
    pub k: usize,
    pub d: f64,
}

pub fn ldp_budget(config: &PerturbationConfig, delta: f64) -> Result<LdpBudget> {
    let d = config.band_width();
    if !(delta > 0.0 && delta < 4.0 * d) {
        return Err(invalid(format!(
            "neighborhood half-width must lie in (0, 4d) = (0, {}), got {delta}",
            4.0 * d
        )));
    }
    let k = config.samples_per_user();
    Ok(LdpBudget {
        epsilon: k as f64 * (4.0 * d / delta).ln(),
        delta_neighborhood: delta,
        k,
        d,
    })
}
