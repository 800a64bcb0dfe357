//! Nonparametric tests of mutual independence and serial dependence.
//!
//! Distance covariance and its Möbius decomposition over block subsets,
//! empirical-CDF (Cramér–von Mises type) statistics, distance
//! autocovariance for time series, and permutation / bootstrap
//! calibration with reproducible per-replicate random streams.

pub mod cvm;
pub mod data;
pub mod dcov;
pub mod error;
pub mod harness;
pub mod resampling;
pub mod serial;
pub mod subset;
pub mod sum;

pub use data::{load_csv, read_csv, BlockSample, BlockSpec, DataMatrix, RankMatrix};
pub use dcov::{dcor, dcov_stat, dcov_test, mobius_all_subsets, mobius_dcov, CenteredKernel, Exponent};
pub use error::{DepError, Result};
pub use resampling::{ResamplingPlan, Scheme, TestResult, RNG_ALGORITHM};
pub use serial::{LagSpectrum, SeriesSample};
pub use subset::{all_subsets, MobiusResult, Subset};
