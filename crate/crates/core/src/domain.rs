//! Value ranges, interest grids, density vectors and the records passed
//! between the client and server halves of the pipeline.
//!
//! Every type here is immutable once constructed; grids are shared behind an
//! [`Arc`] so density vectors defined on the same grid can be compared cheaply.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Closed domain `[a, b]` of the private values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRange {
    a: f64,
    b: f64,
}

impl DataRange {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("range bounds must be finite, got [{a}, {b}]")));
        }
        if a >= b {
            return Err(invalid(format!("range requires a < b, got [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn upper(&self) -> f64 {
        self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }
}

/// Client-side perturbation parameters: band width `d` and samples per user `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    range: DataRange,
    band_width: f64,
    samples_per_user: usize,
}

impl PerturbationConfig {
    pub fn new(range: DataRange, band_width: f64, samples_per_user: usize) -> Result<Self> {
        if !(band_width > 0.0 && band_width < range.width()) {
            return Err(invalid(format!(
                "band width must lie in (0, {}), got {band_width}",
                range.width()
            )));
        }
        if samples_per_user == 0 {
            return Err(invalid("samples per user must be at least 1"));
        }
        Ok(Self {
            range,
            band_width,
            samples_per_user,
        })
    }

    pub fn range(&self) -> DataRange {
        self.range
    }

    pub fn band_width(&self) -> f64 {
        self.band_width
    }

    pub fn samples_per_user(&self) -> usize {
        self.samples_per_user
    }
}

/// An ordered collection of private (or inferred, or resampled) values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    range: DataRange,
}

impl Dataset {
    pub fn new(values: Vec<f64>, range: DataRange) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !range.contains(**v)) {
            return Err(invalid(format!(
                "value {v} at index {i} lies outside [{}, {}]",
                range.lower(),
                range.upper()
            )));
        }
        Ok(Self { values, range })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> DataRange {
        self.range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One user's perturbed samples. `band_offset` is the drawn left offset of
/// the prohibited band and is only exported in diagnostic runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedReport {
    pub user_id: String,
    pub samples: Vec<f64>,
    pub band_offset: f64,
}

/// Strictly increasing evaluation points `z_1 < … < z_m` plus the auxiliary
/// point `z_{m+1}` that closes the last rectangular cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestGrid {
    points: Vec<f64>,
    auxiliary: f64,
}

impl InterestGrid {
    pub fn new(points: Vec<f64>, auxiliary: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("grid needs at least one point"));
        }
        if points.iter().any(|z| !z.is_finite()) || !auxiliary.is_finite() {
            return Err(invalid("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("grid points must be strictly increasing"));
        }
        if auxiliary <= points[points.len() - 1] {
            return Err(invalid("auxiliary point must exceed the last grid point"));
        }
        Ok(Self { points, auxiliary })
    }

    /// `m` equally spaced points including both endpoints of `range`; the
    /// auxiliary point repeats the last spacing.
    pub fn uniform(range: DataRange, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid(format!("uniform grid needs m >= 2, got {m}")));
        }
        let step = range.width() / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|i| range.lower() + step * i as f64).collect();
        points[m - 1] = range.upper();
        let auxiliary = points[m - 1] + (points[m - 1] - points[m - 2]);
        Self::new(points, auxiliary)
    }

    /// Builds a grid from points only, extending by the last spacing (or by
    /// one unit for a single point).
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let auxiliary = match points.len() {
            0 => return Err(invalid("grid needs at least one point")),
            1 => points[0] + 1.0,
            m => points[m - 1] + (points[m - 1] - points[m - 2]),
        };
        Self::new(points, auxiliary)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn auxiliary(&self) -> f64 {
        self.auxiliary
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell widths `z_{i+1} - z_i`, the last one using the auxiliary point.
    pub fn widths(&self) -> Vec<f64> {
        let m = self.points.len();
        (0..m)
            .map(|i| {
                let next = if i + 1 < m { self.points[i + 1] } else { self.auxiliary };
                next - self.points[i]
            })
            .collect()
    }

    pub fn lies_within(&self, range: DataRange) -> bool {
        self.points.iter().all(|z| range.contains(*z))
    }
}

/// Density values on an [`InterestGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    grid: Arc<InterestGrid>,
    values: Vec<f64>,
}

impl DensityVector {
    pub fn new(grid: Arc<InterestGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "density has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("density values must be finite and >= 0, got {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<InterestGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<InterestGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &DensityVector) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Rectangular-rule integral `Σ v_i (z_{i+1} - z_i)`.
    pub fn area(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Cell masses `v_i (z_{i+1} - z_i)`.
    pub fn masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .collect()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.area() - 1.0).abs() <= tol
    }

    /// Rescales to unit area. Fails when the area is zero.
    pub fn normalized(&self) -> Result<Self> {
        let area = self.area();
        if !(area > 0.0) {
            return Err(invalid("cannot normalize a density with zero area"));
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v / area).collect(),
        })
    }

    /// Grid point with the largest density, smallest point on ties.
    pub fn argmax_point(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.grid.points()[best]
    }
}

/// Discretized perturbation kernel; `entries[j][i] = p(z_i, z_j)` so that the
/// forward map is a matrix-vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    grid: Arc<InterestGrid>,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub(crate) fn from_row_major(grid: Arc<InterestGrid>, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), grid.len() * grid.len());
        Self { grid, entries }
    }

    pub fn grid(&self) -> &Arc<InterestGrid> {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.len()
    }

    /// `p(z_input, z_output)`.
    pub fn get(&self, output: usize, input: usize) -> f64 {
        self.entries[output * self.size() + input]
    }

    pub fn row(&self, output: usize) -> &[f64] {
        let m = self.size();
        &self.entries[output * m..(output + 1) * m]
    }

    /// Rectangular-rule integral of column `input` over the output grid.
    pub fn column_mass(&self, input: usize) -> f64 {
        self.grid
            .widths()
            .iter()
            .enumerate()
            .map(|(j, w)| self.get(j, input) * w)
            .sum()
    }
}
