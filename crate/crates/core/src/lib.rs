//! Real-value negative surveys.
//!
//! Each client reports `k` values drawn from `[a, b]` minus a randomized band
//! of width `d` around its private value. The server estimates the density of
//! the reports by KDE and inverts the perturbation kernel with a constrained
//! divergence minimization. Utility (Wasserstein-1, six summary statistics)
//! and privacy (likelihood attack, Euclidean distance) are measured against
//! Laplace and Gaussian noise-addition baselines.

pub mod attack;
pub mod baselines;
pub mod data;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kde;
pub mod metrics;
pub mod perturbation;
pub mod reconstruction;

pub use domain::{DataRange, Dataset, DensityVector, InterestGrid, PerturbationConfig, PerturbedReport, TransitionMatrix};
pub use error::{Error, Result};
