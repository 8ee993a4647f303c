//! Readers and writers for the on-disk formats.
//!
//! | artifact        | format                                              |
//! |-----------------|-----------------------------------------------------|
//! | dataset         | `value` header then one value per line (header optional on read) |
//! | reports         | CSV `user_id,sample_index,value[,band_offset]`      |
//! | density         | CSV `z,density`, or reconstruction JSON             |
//! | attack result   | CSV `user_id,x_infer,log_likelihood`                |
//! | indicators      | JSON object with the six named fields               |
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the in-memory values bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attack::AttackResult;
use crate::domain::{DataRange, Dataset, DensityVector, InterestGrid, PerturbedReport};
use crate::error::{Error, Result};
use crate::reconstruction::ReconstructionResult;

fn malformed(what: &str, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("{what}, record {line}: {detail}"))
}

fn parse_f64(what: &str, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| malformed(what, line, format!("`{field}` is not a number")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

fn expect_headers<R: Read>(reader: &mut csv::Reader<R>, what: &str, required: &[&str]) -> Result<Vec<usize>> {
    let headers = reader.headers()?.clone();
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Malformed(format!("{what}: missing `{name}` column")))
        })
        .collect()
}

// ---- datasets ----

pub fn write_dataset<W: Write>(mut out: W, data: &[f64]) -> Result<()> {
    writeln!(out, "value")?;
    for x in data {
        writeln!(out, "{x}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the values of a dataset file without range checks.
pub fn read_values<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let field = line.trim();
        if field.is_empty() || (values.is_empty() && i == 0 && field == "value") {
            continue;
        }
        values.push(parse_f64("dataset", i + 1, field)?);
    }
    if values.is_empty() {
        return Err(Error::Malformed("dataset has no values".into()));
    }
    Ok(values)
}

pub fn read_dataset<R: Read>(input: R, range: DataRange) -> Result<Dataset> {
    Dataset::new(read_values(input)?, range)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &[f64]) -> Result<()> {
    write_dataset(create(path.as_ref())?, data)
}

pub fn load_values(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_values(File::open(path.as_ref())?)
}

pub fn load_dataset(path: impl AsRef<Path>, range: DataRange) -> Result<Dataset> {
    Dataset::new(load_values(path)?, range)
}

// ---- reports ----

pub fn write_reports<W: Write>(out: W, reports: &[PerturbedReport], diagnostic: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if diagnostic {
        w.write_record(["user_id", "sample_index", "value", "band_offset"])?;
    } else {
        w.write_record(["user_id", "sample_index", "value"])?;
    }
    for r in reports {
        for (j, y) in r.samples.iter().enumerate() {
            let (j, y) = (j.to_string(), y.to_string());
            if diagnostic {
                w.write_record([r.user_id.as_str(), &j, &y, &r.band_offset.to_string()])?;
            } else {
                w.write_record([r.user_id.as_str(), &j, &y])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by user in order of first appearance and orders each user's
/// samples by `sample_index`. A missing `band_offset` column reads as NaN.
pub fn read_reports<R: Read>(input: R) -> Result<Vec<PerturbedReport>> {
    let mut reader = csv_reader(input);
    let cols = expect_headers(&mut reader, "reports", &["user_id", "sample_index", "value"])?;
    let offset_col = reader.headers()?.iter().position(|h| h == "band_offset");

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(PerturbedReport, Vec<(usize, f64)>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |c: usize| record.get(c).ok_or_else(|| malformed("reports", line, "short row"));
        let user = field(cols[0])?;
        let j: usize = field(cols[1])?
            .parse()
            .map_err(|_| malformed("reports", line, "sample_index is not a non-negative integer"))?;
        let y = parse_f64("reports", line, field(cols[2])?)?;
        let offset = match offset_col {
            Some(c) => parse_f64("reports", line, field(c)?)?,
            None => f64::NAN,
        };
        let slot = *index.entry(user.to_string()).or_insert_with(|| {
            rows.push((
                PerturbedReport {
                    user_id: user.to_string(),
                    samples: Vec::new(),
                    band_offset: offset,
                },
                Vec::new(),
            ));
            rows.len() - 1
        });
        rows[slot].1.push((j, y));
    }

    rows.into_iter()
        .map(|(mut report, mut samples)| {
            samples.sort_by_key(|(j, _)| *j);
            if samples.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Malformed(format!(
                    "reports: user `{}` repeats a sample_index",
                    report.user_id
                )));
            }
            report.samples = samples.into_iter().map(|(_, y)| y).collect();
            Ok(report)
        })
        .collect()
}

pub fn save_reports(path: impl AsRef<Path>, reports: &[PerturbedReport], diagnostic: bool) -> Result<()> {
    write_reports(create(path.as_ref())?, reports, diagnostic)
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<PerturbedReport>> {
    read_reports(File::open(path.as_ref())?)
}

// ---- densities ----

pub fn write_density_csv<W: Write>(out: W, density: &DensityVector) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z", "density"])?;
    for (z, v) in density.grid().points().iter().zip(density.values()) {
        w.write_record([z.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_density_csv<R: Read>(input: R) -> Result<DensityVector> {
    let mut reader = csv_reader(input);
    let cols = expect_headers(&mut reader, "density", &["z", "density"])?;
    let (mut points, mut values) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let get = |c: usize| record.get(c).ok_or_else(|| malformed("density", i + 2, "short row"));
        points.push(parse_f64("density", i + 2, get(cols[0])?)?);
        values.push(parse_f64("density", i + 2, get(cols[1])?)?);
    }
    DensityVector::new(Arc::new(InterestGrid::from_points(points)?), values)
}

/// JSON shape of a [`ReconstructionResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub objective: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&ReconstructionResult> for ReconstructionRecord {
    fn from(r: &ReconstructionResult) -> Self {
        Self {
            grid: r.density.grid().points().to_vec(),
            density: r.density.values().to_vec(),
            objective: r.objective_value,
            constraint_residual: r.constraint_residual,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

impl ReconstructionRecord {
    pub fn to_density(&self) -> Result<DensityVector> {
        DensityVector::new(Arc::new(InterestGrid::from_points(self.grid.clone())?), self.density.clone())
    }
}

pub fn save_reconstruction(path: impl AsRef<Path>, result: &ReconstructionResult) -> Result<()> {
    let mut out = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut out, &ReconstructionRecord::from(result))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_reconstruction(path: impl AsRef<Path>) -> Result<ReconstructionRecord> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path.as_ref())?))?)
}

/// Loads a density from `.json` (reconstruction output) or `z,density` CSV.
pub fn load_density(path: impl AsRef<Path>) -> Result<DensityVector> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        load_reconstruction(path)?.to_density()
    } else {
        read_density_csv(File::open(path)?)
    }
}

pub fn save_density_csv(path: impl AsRef<Path>, density: &DensityVector) -> Result<()> {
    write_density_csv(create(path.as_ref())?, density)
}

// ---- attack results ----

pub fn write_attack<W: Write>(out: W, result: &AttackResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "x_infer", "log_likelihood"])?;
    for ((id, x), ll) in result
        .user_ids
        .iter()
        .zip(result.inferred.values())
        .zip(&result.log_likelihoods)
    {
        w.write_record([id.clone(), x.to_string(), ll.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attack<R: Read>(input: R, range: DataRange) -> Result<AttackResult> {
    let mut reader = csv_reader(input);
    let cols = expect_headers(&mut reader, "attack", &["user_id", "x_infer", "log_likelihood"])?;
    let (mut ids, mut xs, mut lls) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let get = |c: usize| record.get(c).ok_or_else(|| malformed("attack", i + 2, "short row"));
        ids.push(get(cols[0])?.to_string());
        xs.push(parse_f64("attack", i + 2, get(cols[1])?)?);
        lls.push(parse_f64("attack", i + 2, get(cols[2])?)?);
    }
    Ok(AttackResult {
        user_ids: ids,
        inferred: Dataset::new(xs, range)?,
        log_likelihoods: lls,
    })
}

pub fn save_attack(path: impl AsRef<Path>, result: &AttackResult) -> Result<()> {
    write_attack(create(path.as_ref())?, result)
}

pub fn load_attack(path: impl AsRef<Path>, range: DataRange) -> Result<AttackResult> {
    read_attack(File::open(path.as_ref())?, range)
}

// ---- JSON ----

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::IndicatorSet;

    fn range() -> DataRange {
        DataRange::new(0.0, 10.0).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let values = vec![0.1 + 0.2, 1.0 / 3.0, 10.0, 0.0];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &values).unwrap();
        let back = read_dataset(buf.as_slice(), range()).unwrap();
        assert_eq!(back.values(), values.as_slice());
    }

    #[test]
    fn dataset_without_header_and_with_blank_lines() {
        let d = read_dataset("1.5\n\n2\n".as_bytes(), range()).unwrap();
        assert_eq!(d.values(), &[1.5, 2.0]);
        assert!(read_dataset("value\nabc\n".as_bytes(), range()).is_err());
        assert!(read_dataset("value\n".as_bytes(), range()).is_err());
        assert!(read_dataset("11\n".as_bytes(), range()).is_err());
    }

    #[test]
    fn reports_round_trip() {
        let reports = vec![
            PerturbedReport {
                user_id: "a".into(),
                samples: vec![1.0, 2.5],
                band_offset: 0.25,
            },
            PerturbedReport {
                user_id: "b".into(),
                samples: vec![9.0, 0.125],
                band_offset: 1.0,
            },
        ];
        let mut buf = Vec::new();
        write_reports(&mut buf, &reports, true).unwrap();
        assert_eq!(read_reports(buf.as_slice()).unwrap(), reports);

        let mut plain = Vec::new();
        write_reports(&mut plain, &reports, false).unwrap();
        let text = String::from_utf8(plain.clone()).unwrap();
        assert!(text.starts_with("user_id,sample_index,value\n"));
        assert_eq!(text.lines().count(), 5);
        let back = read_reports(plain.as_slice()).unwrap();
        assert!(back[0].band_offset.is_nan());
        assert_eq!(back[1].samples, reports[1].samples);
    }

    #[test]
    fn reports_are_grouped_and_ordered_by_index() {
        let text = "user_id,sample_index,value\nu,1,2\nv,0,5\nu,0,1\n";
        let r = read_reports(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].user_id, "u");
        assert_eq!(r[0].samples, vec![1.0, 2.0]);
        assert!(read_reports("user_id,sample_index,value\nu,0,1\nu,0,2\n".as_bytes()).is_err());
        assert!(read_reports("user,value\nu,1\n".as_bytes()).is_err());
    }

    #[test]
    fn density_csv_round_trip() {
        let grid = Arc::new(InterestGrid::uniform(range(), 11).unwrap());
        let d = DensityVector::new(grid, (0..11).map(|i| i as f64 / 55.0).collect()).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &d).unwrap();
        let back = read_density_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), d.values());
        assert_eq!(back.grid().points(), d.grid().points());
        assert_eq!(back.grid().auxiliary(), d.grid().auxiliary());
    }

    #[test]
    fn indicator_json_has_named_fields() {
        let s = IndicatorSet {
            mean: 1.0,
            std_dev: 2.0,
            mode: 3.0,
            median: 4.0,
            skewness: 5.0,
            kurtosis: 6.0,
        };
        let v: serde_json::Value = serde_json::to_value(s).unwrap();
        for key in ["mean", "std_dev", "mode", "median", "skewness", "kurtosis"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn attack_round_trip_keeps_infinite_likelihood() {
        let r = AttackResult {
            user_ids: vec!["0".into(), "1".into()],
            inferred: Dataset::new(vec![0.0, 7.25], range()).unwrap(),
            log_likelihoods: vec![f64::NEG_INFINITY, -3.5],
        };
        let mut buf = Vec::new();
        write_attack(&mut buf, &r).unwrap();
        assert_eq!(read_attack(buf.as_slice(), range()).unwrap(), r);
    }
}
