//! Privacy/utility sweeps over RVNS band widths and baseline noise scales.
//!
//! A config is a flat TOML file:
//!
//! ```toml
//! dataset = "chi2"          # or "csv"
//! df = 2                    # chi2 only
//! n = 50000                 # chi2 only
//! # csv_path = "bmi.csv"    # csv only, relative to the config file
//! # csv_column = "value"
//! a = 0.0
//! b = 10.0
//! m = 100
//! k = 5
//! d_sweep = [0.5, 1, 2, 4, 8]
//! laplace_scales = [0.5, 1]
//! gaussian_scales = []
//! repetitions = 11
//! seed = 1
//! ```
//!
//! Optional keys: `attack_resolution` (1000), `lambda1`, `lambda2`,
//! `max_iterations` (solver defaults), `bandwidth` (Silverman when absent),
//! `clip_noise` (false), `report_runtime` (false).
//!
//! The dataset is drawn once from `seed`; repetition `r` of every sweep point
//! uses job seed `seed + r`. `runtime_s` is written as 0 unless
//! `report_runtime` is set, so tables stay byte-identical across runs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack, privacy_distance, AttackOptions, TieBreak};
use crate::baselines::{baseline_privacy, perturb_noise_dataset, Mechanism, NoiseConfig};
use crate::data::{generate_chi_squared, load_csv};
use crate::domain::{DataRange, Dataset, DensityVector, InterestGrid, PerturbationConfig};
use crate::error::{invalid, Error, Result};
use crate::kde::{kde_at, Bandwidth, KdeConfig};
use crate::metrics::{indicator_error, wasserstein1, IndicatorSet, W1Options};
use crate::perturbation::perturb_dataset;
use crate::reconstruction::{reconstruct, ReconstructionConfig};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Generate = 1,
    Perturb = 2,
    Resample = 3,
    Noise = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Utility and privacy of one density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Scaled W₁ between the estimate and the KDE of the original data.
    pub wasserstein: f64,
    pub privacy_distance: Option<f64>,
    pub indicator_errors: IndicatorSet,
}

/// Compares `estimate` (renormalized first) against `original`. `guesses`
/// are the adversary's values for the privacy distance, if any. The
/// indicator resample draws `|original|` values from the
/// [`Stream::Resample`] stream of `seed`.
pub fn evaluate(
    original: &Dataset,
    estimate: &DensityVector,
    kde: &KdeConfig,
    guesses: Option<&[f64]>,
    seed: u64,
) -> Result<Evaluation> {
    let estimate = estimate.normalized()?;
    let reference = kde_at(estimate.grid(), original.values(), kde)?;
    let wasserstein = wasserstein1(
        &estimate,
        &reference,
        W1Options {
            as_masses: false,
            scaled: true,
        },
    )?;
    let privacy_distance = match guesses {
        Some(g) => Some(baseline_privacy(original, g)?),
        None => None,
    };
    let indicator_errors = indicator_error(
        original,
        &estimate,
        original.len(),
        &mut stream_rng(seed, Stream::Resample),
    )?;
    Ok(Evaluation {
        wasserstein,
        privacy_distance,
        indicator_errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Chi2,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub df: Option<u32>,
    pub n: Option<usize>,
    pub csv_path: Option<PathBuf>,
    #[serde(default = "default_column")]
    pub csv_column: String,
    pub a: f64,
    pub b: f64,
    pub m: usize,
    pub k: usize,
    #[serde(default)]
    pub d_sweep: Vec<f64>,
    #[serde(default)]
    pub laplace_scales: Vec<f64>,
    #[serde(default)]
    pub gaussian_scales: Vec<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub attack_resolution: usize,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub max_iterations: Option<usize>,
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub clip_noise: bool,
    #[serde(default)]
    pub report_runtime: bool,
}

fn default_column() -> String {
    "value".into()
}

fn default_repetitions() -> usize {
    11
}

fn default_resolution() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves `csv_path` against the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(csv), Some(dir)) = (&cfg.csv_path, path.parent()) {
            if csv.is_relative() {
                cfg.csv_path = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let range = self.range()?;
        match self.dataset {
            DatasetSource::Chi2 if self.df.is_none() || self.n.is_none() => {
                return Err(invalid("config: chi2 datasets need `df` and `n`"));
            }
            DatasetSource::Csv if self.csv_path.is_none() => {
                return Err(invalid("config: csv datasets need `csv_path`"));
            }
            _ => {}
        }
        if self.m < 2 {
            return Err(invalid("config: `m` must be at least 2"));
        }
        if self.repetitions == 0 {
            return Err(invalid("config: `repetitions` must be at least 1"));
        }
        for &d in &self.d_sweep {
            PerturbationConfig::new(range, d, self.k)?;
        }
        for &s in self.laplace_scales.iter().chain(&self.gaussian_scales) {
            NoiseConfig::new(Mechanism::Laplace, s, false)?;
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("config: bandwidth must be positive, got {h}")));
            }
        }
        if self.attack_resolution < 2 {
            return Err(invalid("config: `attack_resolution` must be at least 2"));
        }
        self.reconstruction().validate()
    }

    pub fn range(&self) -> Result<DataRange> {
        DataRange::new(self.a, self.b)
    }

    pub fn kde(&self) -> KdeConfig {
        KdeConfig {
            bandwidth: self.bandwidth.map_or(Bandwidth::Silverman, Bandwidth::Fixed),
            reflect: None,
        }
    }

    pub fn reconstruction(&self) -> ReconstructionConfig {
        let mut r = ReconstructionConfig::default();
        if let Some(l) = self.lambda1 {
            r.lambda1 = l;
        }
        if let Some(l) = self.lambda2 {
            r.lambda2 = l;
        }
        if let Some(it) = self.max_iterations {
            r.max_iterations = it;
        }
        r
    }

    pub fn attack_options(&self) -> AttackOptions {
        AttackOptions {
            grid_resolution: self.attack_resolution,
            tie_break: TieBreak::Smallest,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let range = self.range()?;
        match self.dataset {
            DatasetSource::Chi2 => generate_chi_squared(
                self.df.unwrap_or_default(),
                self.n.unwrap_or_default(),
                range,
                &mut stream_rng(self.seed, Stream::Generate),
            ),
            DatasetSource::Csv => {
                let path = self.csv_path.as_ref().ok_or_else(|| invalid("config: missing `csv_path`"))?;
                Ok(load_csv(path, &self.csv_column, range)?.0)
            }
        }
    }
}

/// One perturb, reconstruct, attack, evaluate pass of RVNS with band width `d`.
pub fn rvns_job(data: &Dataset, cfg: &ExperimentConfig, d: f64, job_seed: u64) -> Result<Evaluation> {
    let pconfig = PerturbationConfig::new(data.range(), d, cfg.k)?;
    let grid = Arc::new(InterestGrid::uniform(data.range(), cfg.m)?);
    let reports = perturb_dataset(data, &pconfig, &mut stream_rng(job_seed, Stream::Perturb))?;
    let recon = reconstruct(&reports, &grid, &pconfig, &cfg.kde(), &cfg.reconstruction())?;
    let inferred = attack(&reports, &pconfig, cfg.attack_options())?;
    let mut eval = evaluate(data, &recon.density, &cfg.kde(), None, job_seed)?;
    eval.privacy_distance = Some(privacy_distance(data, &inferred.inferred)?);
    Ok(eval)
}

/// One noise-addition pass: the server's estimate is the KDE of the noisy
/// values and the adversary's guess is the noisy value itself.
pub fn baseline_job(
    data: &Dataset,
    cfg: &ExperimentConfig,
    mechanism: Mechanism,
    scale: f64,
    job_seed: u64,
) -> Result<Evaluation> {
    let noise = NoiseConfig::new(mechanism, scale, cfg.clip_noise)?;
    let noisy = perturb_noise_dataset(data, &noise, &mut stream_rng(job_seed, Stream::Noise));
    let estimate = baseline_estimate(data.range(), cfg.m, &noisy, &cfg.kde())?;
    evaluate(data, &estimate, &cfg.kde(), Some(&noisy), job_seed)
}

/// Normalized KDE of `samples` on the uniform `m`-point grid over `range`.
pub fn baseline_estimate(range: DataRange, m: usize, samples: &[f64], kde: &KdeConfig) -> Result<DensityVector> {
    let grid = Arc::new(InterestGrid::uniform(range, m)?);
    kde_at(&grid, samples, kde)?.normalized()
}

/// Repetition-averaged row of the trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub mechanism: &'static str,
    pub param: f64,
    pub privacy_distance: f64,
    pub wasserstein: f64,
    pub errors: IndicatorSet,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy)]
enum Point {
    Rvns(f64),
    Noise(Mechanism, f64),
}

impl Point {
    fn name(&self) -> &'static str {
        match self {
            Point::Rvns(_) => "rvns",
            Point::Noise(m, _) => m.name(),
        }
    }

    fn param(&self) -> f64 {
        match self {
            Point::Rvns(p) | Point::Noise(_, p) => *p,
        }
    }
}

/// Runs every `(point, repetition)` job in parallel and averages per point.
/// Rows follow the config order: RVNS, then Laplace, then Gaussian.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    let points: Vec<Point> = cfg
        .d_sweep
        .iter()
        .map(|d| Point::Rvns(*d))
        .chain(cfg.laplace_scales.iter().map(|s| Point::Noise(Mechanism::Laplace, *s)))
        .chain(cfg.gaussian_scales.iter().map(|s| Point::Noise(Mechanism::Gaussian, *s)))
        .collect();
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let data = cfg.load_dataset()?;
    let reps = cfg.repetitions;

    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..reps).map(move |r| (p, r))).collect();
    let outcomes: Vec<(Evaluation, f64)> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let start = Instant::now();
            let eval = match points[p] {
                Point::Rvns(d) => rvns_job(&data, cfg, d, seed),
                Point::Noise(mech, s) => baseline_job(&data, cfg, mech, s, seed),
            }?;
            Ok((eval, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;

    Ok(points
        .iter()
        .zip(outcomes.chunks(reps))
        .map(|(point, chunk)| {
            let mean = |f: &dyn Fn(&(Evaluation, f64)) -> f64| chunk.iter().map(f).sum::<f64>() / reps as f64;
            let e = |f: fn(&IndicatorSet) -> f64| mean(&|o| f(&o.0.indicator_errors));
            TradeoffRow {
                mechanism: point.name(),
                param: point.param(),
                privacy_distance: mean(&|o| o.0.privacy_distance.unwrap_or(f64::NAN)),
                wasserstein: mean(&|o| o.0.wasserstein),
                errors: IndicatorSet {
                    mean: e(|s| s.mean),
                    std_dev: e(|s| s.std_dev),
                    mode: e(|s| s.mode),
                    median: e(|s| s.median),
                    skewness: e(|s| s.skewness),
                    kurtosis: e(|s| s.kurtosis),
                },
                runtime_s: if cfg.report_runtime { mean(&|o| o.1) } else { 0.0 },
            }
        })
        .collect())
}

pub const TABLE_HEADER: &str =
    "mechanism,param,privacy_distance,wasserstein,mean_err,std_err,mode_err,median_err,skew_err,kurt_err,runtime_s";

pub fn write_table<W: Write>(out: W, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER.split(','))?;
    for r in rows {
        let e = &r.errors;
        let nums = [
            r.param,
            r.privacy_distance,
            r.wasserstein,
            e.mean,
            e.std_dev,
            e.mode,
            e.median,
            e.skewness,
            e.kurtosis,
            r.runtime_s,
        ];
        let mut record = vec![r.mechanism.to_string()];
        record.extend(nums.iter().map(|x| x.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(Error::Io)
}
