//! Synthetic chi-squared datasets and CSV ingestion of real data.

use std::path::Path;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::domain::{DataRange, Dataset};
use crate::error::{invalid, Error, Result};

/// Draws `n` chi-squared(`df`) values restricted to `range`; out-of-range
/// draws are rejected and redrawn.
pub fn generate_chi_squared<R: Rng + ?Sized>(df: u32, n: usize, range: DataRange, rng: &mut R) -> Result<Dataset> {
    if df == 0 {
        return Err(invalid("degrees of freedom must be at least 1"));
    }
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| invalid(e.to_string()))?;
    let budget = n.saturating_mul(10_000).max(1_000_000);
    let mut values = Vec::with_capacity(n);
    let mut draws = 0usize;
    while values.len() < n {
        draws += 1;
        if draws > budget {
            return Err(invalid(format!(
                "range [{}, {}] holds too little chi-squared({df}) mass for rejection sampling",
                range.lower(),
                range.upper()
            )));
        }
        let x = dist.sample(rng);
        if range.contains(x) {
            values.push(x);
        }
    }
    Dataset::new(values, range)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    pub retained: usize,
}

/// Reads `column` from a headed CSV file, dropping rows that are missing,
/// unparseable or outside `range`.
pub fn load_csv(path: impl AsRef<Path>, column: &str, range: DataRange) -> Result<(Dataset, LoadStats)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Malformed(format!("{}: {other:?}", path.display())),
        })?;
    let index = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: column.to_string(),
        })?;

    let mut rows = 0;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows += 1;
        let parsed = record.get(index).and_then(|s| s.trim().parse::<f64>().ok());
        if let Some(x) = parsed.filter(|x| range.contains(*x)) {
            values.push(x);
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_path_buf() });
    }
    let retained = values.len();
    Ok((Dataset::new(values, range)?, LoadStats { rows, retained }))
}
