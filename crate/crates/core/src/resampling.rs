//! Monte Carlo permutation and bootstrap engine.
//!
//! Replicate `r` of a plan with seed `s` always draws from
//! [`make_stream`]`(s, r)`, and replicate statistics are collected in index
//! order, so a result never depends on how many worker threads ran it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{BlockSample, DataMatrix};
use crate::error::{DepError, Result};
use crate::serial::SeriesSample;

/// Per-replicate random stream.
pub type StreamRng = ChaCha20Rng;

/// Recorded in every [`TestResult`] so runs can be audited.
pub const RNG_ALGORITHM: &str = "chacha20:seed_from_u64(seed),stream=replicate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Keep block 1 fixed, shuffle the rows of block 2.
    PermuteSecondBlock,
    /// Keep block 1 fixed, shuffle every other block with its own permutation.
    PermuteBlocksIndependently,
    /// Shuffle the time order of a whole series.
    PermuteTimeIndex,
    /// Simulate from a fitted AR(1) with resampled centered residuals.
    ParametricBootstrapAr1,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::PermuteSecondBlock => "permute-second-block",
            Scheme::PermuteBlocksIndependently => "permute-blocks-independently",
            Scheme::PermuteTimeIndex => "permute-time-index",
            Scheme::ParametricBootstrapAr1 => "parametric-bootstrap-ar1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResamplingPlan {
    pub scheme: Scheme,
    pub reps: usize,
    pub seed: u64,
    pub keep_replicates: bool,
}

impl ResamplingPlan {
    pub fn new(scheme: Scheme, reps: usize, seed: u64) -> Self {
        Self {
            scheme,
            reps,
            seed,
            keep_replicates: false,
        }
    }

    pub fn keep_replicates(mut self, keep: bool) -> Self {
        self.keep_replicates = keep;
        self
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        Self {
            scheme,
            ..self.clone()
        }
    }

    pub(crate) fn require(&self, allowed: &[Scheme], method: &str) -> Result<()> {
        if allowed.contains(&self.scheme) {
            Ok(())
        } else {
            Err(DepError::IncompatibleScheme {
                scheme: self.scheme.name().to_string(),
                method: method.to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub alpha: Option<f64>,
    pub scheme: &'static str,
    pub rng: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<Vec<f64>>,
}

impl TestResult {
    /// Assemble a result from an observed statistic and its replicates.
    pub fn from_replicates(
        method: &str,
        statistic: f64,
        replicates: Vec<f64>,
        plan: &ResamplingPlan,
        n: usize,
    ) -> Self {
        let p_value = (plan.reps > 0).then(|| add_one_pvalue(statistic, &replicates));
        Self {
            method: method.to_string(),
            statistic,
            p_value,
            reps: plan.reps,
            seed: plan.seed,
            n,
            alpha: None,
            scheme: plan.scheme.name(),
            rng: RNG_ALGORITHM,
            replicates: plan.keep_replicates.then_some(replicates),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }
}

/// Independent stream for replicate `index` under `seed`.
pub fn make_stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform random permutation of `0..n`.
pub fn random_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// `(1 + #{replicate >= observed}) / (reps + 1)`.
pub fn add_one_pvalue(observed: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&r| r >= observed).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

/// Evaluate `f` once per replicate on its own stream; output in replicate order.
pub fn replicate_statistics<F>(plan: &ResamplingPlan, f: F) -> Vec<f64>
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    (0..plan.reps)
        .into_par_iter()
        .map(|r| f(&mut make_stream(plan.seed, r as u64)))
        .collect()
}

/// Vector-valued variant of [`replicate_statistics`].
pub fn replicate_vectors<F>(plan: &ResamplingPlan, f: F) -> Vec<Vec<f64>>
where
    F: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    (0..plan.reps)
        .into_par_iter()
        .map(|r| f(&mut make_stream(plan.seed, r as u64)))
        .collect()
}

/// Fallible variant of [`replicate_vectors`].
pub fn try_replicate_vectors<F>(plan: &ResamplingPlan, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut StreamRng) -> Result<Vec<f64>> + Sync,
{
    (0..plan.reps)
        .into_par_iter()
        .map(|r| f(&mut make_stream(plan.seed, r as u64)))
        .collect()
}

/// Add-one p-values for each coordinate of a vector statistic.
pub fn coordinate_pvalues(observed: &[f64], replicates: &[Vec<f64>]) -> Vec<f64> {
    (0..observed.len())
        .map(|c| {
            let exceed = replicates.iter().filter(|r| r[c] >= observed[c]).count();
            (1 + exceed) as f64 / (replicates.len() + 1) as f64
        })
        .collect()
}

/// Data that knows how to draw one resample under a null scheme.
pub trait Resample: Sized {
    fn sample_size(&self) -> usize;
    fn resample(&self, scheme: Scheme, rng: &mut StreamRng) -> Result<Self>;
}

impl Resample for BlockSample {
    fn sample_size(&self) -> usize {
        self.n()
    }

    fn resample(&self, scheme: Scheme, rng: &mut StreamRng) -> Result<Self> {
        let n = self.n();
        let perms: Vec<Option<Vec<usize>>> = match scheme {
            Scheme::PermuteSecondBlock if self.d() == 2 => {
                vec![None, Some(random_permutation(n, rng))]
            }
            Scheme::PermuteBlocksIndependently => (0..self.d())
                .map(|k| (k > 0).then(|| random_permutation(n, rng)))
                .collect(),
            Scheme::PermuteTimeIndex => {
                let perm = random_permutation(n, rng);
                let data = self.data().permute_rows(&perm);
                return BlockSample::new(data, self.spec().clone());
            }
            _ => {
                return Err(DepError::IncompatibleScheme {
                    scheme: scheme.name().to_string(),
                    method: format!("{}-block sample", self.d()),
                })
            }
        };
        self.permute_blocks(&perms)
    }
}

impl Resample for SeriesSample {
    fn sample_size(&self) -> usize {
        self.len()
    }

    fn resample(&self, scheme: Scheme, rng: &mut StreamRng) -> Result<Self> {
        match scheme {
            Scheme::PermuteTimeIndex => {
                let perm = random_permutation(self.len(), rng);
                SeriesSample::new(self.values().permute_rows(&perm))
            }
            other => Err(DepError::IncompatibleScheme {
                scheme: other.name().to_string(),
                method: "series sample".to_string(),
            }),
        }
    }
}

impl Resample for DataMatrix {
    fn sample_size(&self) -> usize {
        self.nrows()
    }

    fn resample(&self, scheme: Scheme, rng: &mut StreamRng) -> Result<Self> {
        match scheme {
            Scheme::PermuteTimeIndex => Ok(self.permute_rows(&random_permutation(self.nrows(), rng))),
            other => Err(DepError::IncompatibleScheme {
                scheme: other.name().to_string(),
                method: "data matrix".to_string(),
            }),
        }
    }
}

/// Generic Monte Carlo test: materializes each resample and re-evaluates
/// the statistic on it.
pub fn permutation_pvalue<D, E>(
    method: &str,
    evaluator: E,
    data: &D,
    plan: &ResamplingPlan,
) -> Result<TestResult>
where
    D: Resample + Sync,
    E: Fn(&D) -> Result<f64> + Sync,
{
    if plan.scheme == Scheme::ParametricBootstrapAr1 {
        return Err(DepError::IncompatibleScheme {
            scheme: plan.scheme.name().to_string(),
            method: method.to_string(),
        });
    }
    let observed = evaluator(data)?;
    let replicates: Vec<f64> = (0..plan.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = make_stream(plan.seed, r as u64);
            evaluator(&data.resample(plan.scheme, &mut rng)?)
        })
        .collect::<Result<_>>()?;
    Ok(TestResult::from_replicates(
        method,
        observed,
        replicates,
        plan,
        data.sample_size(),
    ))
}
