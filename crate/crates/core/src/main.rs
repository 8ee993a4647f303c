use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use rvns::attack::{attack, AttackOptions, TieBreak};
use rvns::baselines::{perturb_noise_dataset, Mechanism, NoiseConfig};
use rvns::data::{generate_chi_squared, load_csv};
use rvns::experiment::{baseline_estimate, evaluate, run_experiment, stream_rng, write_table, ExperimentConfig, Stream};
use rvns::io;
use rvns::kde::{Bandwidth, KdeConfig};
use rvns::perturbation::perturb_dataset;
use rvns::reconstruction::{reconstruct, ReconstructionConfig};
use rvns::{DataRange, Dataset, Error, InterestGrid, PerturbationConfig, PerturbedReport, Result};

/// Real-value negative survey toolkit.
#[derive(Parser)]
#[command(name = "rvns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct RangeArgs {
    /// Lower end of the data range.
    #[arg(long, allow_negative_numbers = true)]
    a: f64,
    /// Upper end of the data range.
    #[arg(long, allow_negative_numbers = true)]
    b: f64,
}

impl RangeArgs {
    fn range(&self) -> Result<DataRange> {
        DataRange::new(self.a, self.b)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a chi-squared dataset restricted to [a, b].
    Generate {
        #[arg(long)]
        df: u32,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract one column of a headed CSV into a dataset file.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "value")]
        column: String,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the RVNS perturbation to every value.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        /// Width of the prohibited band.
        #[arg(long)]
        d: f64,
        /// Samples reported per user.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also export each report's band offset.
        #[arg(long)]
        diagnostic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply Laplace or Gaussian noise (one report per user).
    Noise {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        mechanism: Mechanism,
        #[arg(long)]
        scale: f64,
        /// Clamp noisy values to [a, b].
        #[arg(long)]
        clip: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized KDE of the report values, written as `z,density`.
    Estimate {
        #[arg(long)]
        reports: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        m: usize,
        /// Fixed KDE bandwidth; Silverman's rule when omitted.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the private-data density from RVNS reports.
    Reconstruct {
        #[arg(long)]
        reports: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        d: f64,
        /// Grid size.
        #[arg(long)]
        m: usize,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Output JSON; a `.csv` extension writes `z,density` instead.
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximum-likelihood inference of every user's value.
    Attack {
        #[arg(long)]
        reports: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 1000)]
        resolution: usize,
        /// Report the centroid of flat maxima instead of the smallest.
        #[arg(long)]
        centroid: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// W₁ and indicator errors of a density estimate, plus privacy distance.
    Evaluate {
        #[arg(long)]
        original: PathBuf,
        /// Reconstruction JSON or `z,density` CSV.
        #[arg(long)]
        density: PathBuf,
        /// Attack output whose guesses give the privacy distance.
        #[arg(long, conflicts_with = "perturbed")]
        inferred: Option<PathBuf>,
        /// Noise-baseline reports, used directly as the guesses.
        #[arg(long)]
        perturbed: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a privacy/utility sweep described by a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn kde_config(bandwidth: Option<f64>) -> KdeConfig {
    KdeConfig {
        bandwidth: bandwidth.map_or(Bandwidth::Silverman, Bandwidth::Fixed),
        reflect: None,
    }
}

fn samples_per_user(reports: &[PerturbedReport]) -> Result<usize> {
    let k = reports.first().map_or(0, |r| r.samples.len());
    if k == 0 || reports.iter().any(|r| r.samples.len() != k) {
        return Err(Error::Malformed("reports must all carry the same nonzero number of samples".into()));
    }
    Ok(k)
}

fn pooled(reports: &[PerturbedReport]) -> Vec<f64> {
    reports.iter().flat_map(|r| r.samples.iter().copied()).collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            df,
            n,
            range,
            seed,
            out,
        } => {
            let data = generate_chi_squared(df, n, range.range()?, &mut stream_rng(seed, Stream::Generate))?;
            io::save_dataset(out, data.values())
        }
        Command::Ingest {
            input,
            column,
            range,
            out,
        } => {
            let (data, stats) = load_csv(&input, &column, range.range()?)?;
            eprintln!("retained {} of {} rows", stats.retained, stats.rows);
            io::save_dataset(out, data.values())
        }
        Command::Perturb {
            input,
            range,
            d,
            k,
            seed,
            diagnostic,
            out,
        } => {
            let config = PerturbationConfig::new(range.range()?, d, k)?;
            let data = io::load_dataset(input, config.range())?;
            let reports = perturb_dataset(&data, &config, &mut stream_rng(seed, Stream::Perturb))?;
            io::save_reports(out, &reports, diagnostic)
        }
        Command::Noise {
            input,
            range,
            mechanism,
            scale,
            clip,
            seed,
            out,
        } => {
            let config = NoiseConfig::new(mechanism, scale, clip)?;
            let data = io::load_dataset(input, range.range()?)?;
            let noisy = perturb_noise_dataset(&data, &config, &mut stream_rng(seed, Stream::Noise));
            let reports: Vec<PerturbedReport> = noisy
                .into_iter()
                .enumerate()
                .map(|(i, y)| PerturbedReport {
                    user_id: i.to_string(),
                    samples: vec![y],
                    band_offset: f64::NAN,
                })
                .collect();
            io::save_reports(out, &reports, false)
        }
        Command::Estimate {
            reports,
            range,
            m,
            bandwidth,
            out,
        } => {
            let reports = io::load_reports(reports)?;
            let density = baseline_estimate(range.range()?, m, &pooled(&reports), &kde_config(bandwidth))?;
            io::save_density_csv(out, &density)
        }
        Command::Reconstruct {
            reports,
            range,
            d,
            m,
            bandwidth,
            lambda1,
            lambda2,
            max_iterations,
            out,
        } => {
            let reports = io::load_reports(reports)?;
            let config = PerturbationConfig::new(range.range()?, d, samples_per_user(&reports)?)?;
            let grid = Arc::new(InterestGrid::uniform(config.range(), m)?);
            let mut rconfig = ReconstructionConfig::default();
            rconfig.lambda1 = lambda1.unwrap_or(rconfig.lambda1);
            rconfig.lambda2 = lambda2.unwrap_or(rconfig.lambda2);
            rconfig.max_iterations = max_iterations.unwrap_or(rconfig.max_iterations);
            let result = reconstruct(&reports, &grid, &config, &kde_config(bandwidth), &rconfig)?;
            if !result.converged {
                eprintln!(
                    "warning: solver stopped after {} iterations without meeting its tolerances",
                    result.iterations
                );
            }
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                io::save_density_csv(out, &result.density)
            } else {
                io::save_reconstruction(out, &result)
            }
        }
        Command::Attack {
            reports,
            range,
            d,
            resolution,
            centroid,
            out,
        } => {
            let reports = io::load_reports(reports)?;
            let config = PerturbationConfig::new(range.range()?, d, samples_per_user(&reports)?)?;
            let options = AttackOptions {
                grid_resolution: resolution,
                tie_break: if centroid { TieBreak::Centroid } else { TieBreak::Smallest },
            };
            io::save_attack(out, &attack(&reports, &config, options)?)
        }
        Command::Evaluate {
            original,
            density,
            inferred,
            perturbed,
            bandwidth,
            seed,
            out,
        } => {
            let values = io::load_values(original)?;
            let estimate = io::load_density(density)?;
            let points = estimate.grid().points();
            let lo = values.iter().copied().fold(points[0], f64::min);
            let hi = values.iter().copied().fold(points[points.len() - 1], f64::max);
            let range = DataRange::new(lo, if hi > lo { hi } else { lo + 1.0 })?;
            let data = Dataset::new(values, range)?;
            let guesses = match (inferred, perturbed) {
                (Some(path), _) => Some(io::load_attack(path, range)?.inferred.into_values()),
                (None, Some(path)) => {
                    let reports = io::load_reports(path)?;
                    if samples_per_user(&reports)? != 1 {
                        return Err(Error::Malformed("noise reports must carry one sample per user".into()));
                    }
                    Some(pooled(&reports))
                }
                (None, None) => None,
            };
            let eval = evaluate(&data, &estimate, &kde_config(bandwidth), guesses.as_deref(), seed)?;
            io::save_json(out, &eval)
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(config)?;
            let rows = run_experiment(&cfg)?;
            write_table(std::io::BufWriter::new(std::fs::File::create(out)?), &rows)
        }
    }
}

/// Bad arguments exit with 2 like clap's own usage errors; everything else
/// (I/O, malformed files, solver failures) exits with 1.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("rvns: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
