//! Monte Carlo studies: null calibration, power tables and the residual
//! miscalibration study.
//!
//! Run `r` of a scenario with seed `s` draws its data from
//! `make_stream(s, r)`; the first word of that stream seeds the resampling
//! of every test in the run, so tests compared within a run see the same
//! data.

use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::cvm::{cvm_test, mobius_cvm_all_subsets};
use crate::data::{BlockSample, DataMatrix};
use crate::dcov::{dcov_test, mobius_all_subsets, Exponent};
use crate::error::{DepError, Result};
use crate::resampling::{
    make_stream, random_permutation, replicate_statistics, ResamplingPlan, Scheme, StreamRng,
    TestResult,
};
use crate::serial::{acov_spectrum, fit_ar1, residual_serial_test, simulate_ar1, SeriesSample};
use crate::sum::exact_sum;

/// Default Monte Carlo replicates per test inside studies.
pub const STUDY_REPS: usize = 499;
/// Fewer runs than this yield no KS verdict.
pub const KS_MIN_RUNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// `d` independent standard normal coordinates, one per block.
    Independent { d: usize },
    /// Bivariate normal with correlation `rho`.
    GaussianRho { rho: f64 },
    /// `Y = X² + σε` with `X, ε` standard normal.
    Quadratic { sigma: f64 },
    /// `(cos θ, sin θ)` plus normal noise of scale `σ`, `θ` uniform.
    Circular { sigma: f64 },
    /// Univariate AR(1) with standard normal innovations.
    Ar1 { phi: f64 },
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Model::Independent { d } => (2..=crate::data::MAX_BLOCKS).contains(&d),
            Model::GaussianRho { rho } => rho.abs() < 1.0,
            Model::Quadratic { sigma } | Model::Circular { sigma } => sigma >= 0.0 && sigma.is_finite(),
            Model::Ar1 { phi } => phi.abs() < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DepError::InvalidParameter(format!("model {self} out of range")))
        }
    }

    /// Whether data from this model satisfy the independence / white-noise null.
    pub fn is_null(&self) -> bool {
        match *self {
            Model::Independent { .. } => true,
            Model::GaussianRho { rho } => rho == 0.0,
            Model::Ar1 { phi } => phi == 0.0,
            Model::Quadratic { .. } | Model::Circular { .. } => false,
        }
    }

    /// Parse `independent[:d]`, `gaussian-rho:ρ`, `quadratic:σ`,
    /// `circular:σ` or `ar1:φ`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a.trim(), Some(b.trim())),
            None => (s.trim(), None),
        };
        let num = |default: Option<f64>| -> Result<f64> {
            match (arg, default) {
                (Some(a), _) => a
                    .parse()
                    .map_err(|_| DepError::InvalidParameter(format!("bad model parameter in {s:?}"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(DepError::InvalidParameter(format!("model {s:?} needs a parameter"))),
            }
        };
        let model = match name {
            "independent" => {
                let d = num(Some(2.0))?;
                if d.fract() != 0.0 || d < 0.0 {
                    return Err(DepError::InvalidParameter(format!("bad block count in {s:?}")));
                }
                Model::Independent { d: d as usize }
            }
            "gaussian-rho" => Model::GaussianRho { rho: num(None)? },
            "quadratic" => Model::Quadratic { sigma: num(None)? },
            "circular" => Model::Circular { sigma: num(None)? },
            "ar1" => Model::Ar1 { phi: num(None)? },
            other => return Err(DepError::InvalidParameter(format!("unknown model {other:?}"))),
        };
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Independent { d } => write!(f, "independent:{d}"),
            Model::GaussianRho { rho } => write!(f, "gaussian-rho:{rho}"),
            Model::Quadratic { sigma } => write!(f, "quadratic:{sigma}"),
            Model::Circular { sigma } => write!(f, "circular:{sigma}"),
            Model::Ar1 { phi } => write!(f, "ar1:{phi}"),
        }
    }
}

/// Column-wise transform applied after generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Margin {
    #[default]
    Identity,
    /// `x ↦ x³`, giving heavy-tailed margins with the same copula.
    Cube,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Blocks(BlockSample),
    Series(SeriesSample),
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw `n` observations from `model`.
pub fn generate(model: Model, margin: Margin, n: usize, rng: &mut StreamRng) -> Result<Sample> {
    model.validate()?;
    let blocks_of = |cols: Vec<Vec<f64>>| -> Result<Sample> {
        let mats = cols
            .iter()
            .map(|c| DataMatrix::from_column(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample::Blocks(BlockSample::from_blocks(&mats)?))
    };
    let mut sample = match model {
        Model::Independent { d } => {
            let mut cols = vec![Vec::with_capacity(n); d];
            for _ in 0..n {
                for c in cols.iter_mut() {
                    c.push(normal(rng));
                }
            }
            blocks_of(cols)?
        }
        Model::GaussianRho { rho } => {
            let s = (1.0 - rho * rho).sqrt();
            let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let a = normal(rng);
                let b = normal(rng);
                x.push(a);
                y.push(rho * a + s * b);
            }
            blocks_of(vec![x, y])?
        }
        Model::Quadratic { sigma } => {
            let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let a = normal(rng);
                let e = normal(rng);
                x.push(a);
                y.push(a * a + sigma * e);
            }
            blocks_of(vec![x, y])?
        }
        Model::Circular { sigma } => {
            let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                x.push(theta.cos() + sigma * normal(rng));
                y.push(theta.sin() + sigma * normal(rng));
            }
            blocks_of(vec![x, y])?
        }
        Model::Ar1 { phi } => Sample::Series(simulate_ar1(n, &[0.0], phi, rng, |r, e| {
            e[0] = normal(r);
        })?),
    };
    if margin == Margin::Cube {
        let cube = |v: f64| v * v * v;
        sample = match sample {
            Sample::Blocks(b) => Sample::Blocks(BlockSample::new(b.data().map(cube)?, b.spec().clone())?),
            Sample::Series(s) => Sample::Series(SeriesSample::new(s.values().map(cube)?)?),
        };
    }
    Ok(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Dcov,
    RankDcov,
    Cvm,
    /// Fisher-combined Möbius distance-covariance test.
    Mobius,
    /// Fisher-combined Möbius CDF test.
    MobiusCvm,
    /// Distance-autocovariance portmanteau over `lags` lags.
    Portmanteau { lags: usize },
    /// Absolute Pearson correlation, permutation calibrated. Baseline only.
    Pearson,
}

impl TestKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "dcov" => TestKind::Dcov,
            "rank-dcov" => TestKind::RankDcov,
            "cvm" => TestKind::Cvm,
            "mobius" => TestKind::Mobius,
            "mobius-cvm" => TestKind::MobiusCvm,
            "pearson" => TestKind::Pearson,
            other => match other.strip_prefix("portmanteau") {
                Some("") => TestKind::Portmanteau { lags: 3 },
                Some(rest) => {
                    let lags = rest
                        .trim_start_matches(':')
                        .parse()
                        .map_err(|_| DepError::InvalidParameter(format!("bad test {s:?}")))?;
                    if lags == 0 {
                        return Err(DepError::InvalidParameter("portmanteau needs >= 1 lag".into()));
                    }
                    TestKind::Portmanteau { lags }
                }
                None => return Err(DepError::InvalidParameter(format!("unknown test {s:?}"))),
            },
        })
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::Dcov => f.write_str("dcov"),
            TestKind::RankDcov => f.write_str("rank-dcov"),
            TestKind::Cvm => f.write_str("cvm"),
            TestKind::Mobius => f.write_str("mobius"),
            TestKind::MobiusCvm => f.write_str("mobius-cvm"),
            TestKind::Portmanteau { lags } => write!(f, "portmanteau:{lags}"),
            TestKind::Pearson => f.write_str("pearson"),
        }
    }
}

/// Absolute Pearson correlation test between two univariate blocks,
/// permuting block 2.
pub fn pearson_test(sample: &BlockSample, plan: &ResamplingPlan) -> Result<TestResult> {
    if sample.d() != 2 || sample.dims() != [1, 1] {
        return Err(DepError::InvalidParameter(
            "pearson baseline needs two univariate blocks".into(),
        ));
    }
    let n = sample.n();
    let center = |v: Vec<f64>| {
        let m = exact_sum(v.iter().copied()) / n as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let x = center(sample.block(0).column(0));
    let y = center(sample.block(1).column(0));
    let sxx = exact_sum(x.iter().map(|v| v * v));
    let syy = exact_sum(y.iter().map(|v| v * v));
    let denom = (sxx * syy).sqrt();
    let stat = |perm: Option<&[usize]>| {
        if denom == 0.0 {
            return 0.0;
        }
        let sxy = exact_sum((0..n).map(|i| x[i] * y[perm.map_or(i, |p| p[i])]));
        (sxy / denom).abs()
    };
    let observed = stat(None);
    let replicates = replicate_statistics(plan, |rng| stat(Some(&random_permutation(n, rng))));
    Ok(TestResult::from_replicates("pearson", observed, replicates, plan, n))
}

/// p-value of one test on one generated sample.
pub fn run_test(test: TestKind, sample: &Sample, alpha: Exponent, reps: usize, seed: u64) -> Result<f64> {
    let two_block = |s: &Sample| match s {
        Sample::Blocks(b) => Ok(b.clone()),
        Sample::Series(_) => Err(DepError::InvalidParameter(format!(
            "test {test} needs block data, model produced a series"
        ))),
    };
    let plan2 = ResamplingPlan::new(Scheme::PermuteSecondBlock, reps, seed);
    let plan_ind = ResamplingPlan::new(Scheme::PermuteBlocksIndependently, reps, seed);
    let p = match test {
        TestKind::Dcov => dcov_test(&two_block(sample)?, alpha, &plan2, "dcov")?.p_value,
        TestKind::RankDcov => {
            dcov_test(&two_block(sample)?.to_ranks()?, alpha, &plan2, "rank-dcov")?.p_value
        }
        TestKind::Cvm => cvm_test(&two_block(sample)?, &plan2, "cvm")?.p_value,
        TestKind::Mobius => {
            mobius_all_subsets(&two_block(sample)?, alpha, &plan_ind, "mobius")?.combined_p_value
        }
        TestKind::MobiusCvm => {
            mobius_cvm_all_subsets(&two_block(sample)?, &plan_ind, "mobius-cvm")?.combined_p_value
        }
        TestKind::Pearson => pearson_test(&two_block(sample)?, &plan2)?.p_value,
        TestKind::Portmanteau { lags } => match sample {
            Sample::Series(s) => {
                let plan = ResamplingPlan::new(Scheme::PermuteTimeIndex, reps, seed);
                acov_spectrum(s, lags, alpha, &plan)?.portmanteau_p_value
            }
            Sample::Blocks(_) => {
                return Err(DepError::InvalidParameter(
                    "portmanteau needs a series model".into(),
                ))
            }
        },
    };
    p.ok_or_else(|| DepError::InvalidParameter("studies need reps >= 1".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub model: Model,
    pub margin: Margin,
    pub n: usize,
    pub runs: usize,
    pub level: f64,
    pub reps: usize,
    pub alpha: Exponent,
    pub tests: Vec<TestKind>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(model: Model, n: usize, tests: Vec<TestKind>, seed: u64) -> Self {
        Self {
            model,
            margin: Margin::Identity,
            n,
            runs: 500,
            level: 0.05,
            reps: STUDY_REPS,
            alpha: Exponent::default(),
            tests,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.runs == 0 {
            return Err(DepError::InvalidParameter("runs must be >= 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(DepError::InvalidParameter(format!("level {} not in (0,1)", self.level)));
        }
        if self.reps == 0 {
            return Err(DepError::InvalidParameter("studies need reps >= 1".into()));
        }
        if self.tests.is_empty() {
            return Err(DepError::InvalidParameter("no tests selected".into()));
        }
        Ok(())
    }

    pub fn model_label(&self) -> String {
        match self.margin {
            Margin::Identity => self.model.to_string(),
            Margin::Cube => format!("{}+cube", self.model),
        }
    }
}

/// p-values of every test over every run, `out[test][run]`.
pub fn simulate_pvalues(scenario: &ScenarioSpec) -> Result<Vec<Vec<f64>>> {
    scenario.validate()?;
    let per_run: Vec<Vec<f64>> = (0..scenario.runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = make_stream(scenario.seed, r as u64);
            let test_seed = rng.next_u64();
            let sample = generate(scenario.model, scenario.margin, scenario.n, &mut rng)?;
            scenario
                .tests
                .iter()
                .map(|&t| run_test(t, &sample, scenario.alpha, scenario.reps, test_seed))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..scenario.tests.len())
        .map(|t| per_run.iter().map(|run| run[t]).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub test: String,
    pub model: String,
    pub n: usize,
    pub runs: usize,
    pub level: f64,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
}

impl PowerRow {
    fn from_pvalues(test: TestKind, scenario: &ScenarioSpec, pvals: &[f64]) -> Self {
        let rejections = pvals.iter().filter(|&&p| p <= scenario.level).count();
        let runs = pvals.len();
        let rate = rejections as f64 / runs as f64;
        Self {
            test: test.to_string(),
            model: scenario.model_label(),
            n: scenario.n,
            runs,
            level: scenario.level,
            rejections,
            rate,
            se: (rate * (1.0 - rate) / runs as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn find(&self, test: &str, model: &str, n: usize) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.test == test && r.model == model && r.n == n)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(|e| DepError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| DepError::Csv(e.to_string()))
    }
}

/// Rejection rates over tests × scenarios.
pub fn power_curve(scenarios: &[ScenarioSpec]) -> Result<PowerTable> {
    let mut rows = Vec::new();
    for sc in scenarios {
        let pvals = simulate_pvalues(sc)?;
        for (t, p) in sc.tests.iter().zip(&pvals) {
            rows.push(PowerRow::from_pvalues(*t, sc, p));
        }
    }
    Ok(PowerTable { rows })
}

/// Two-sided exact binomial acceptance band for the rejection rate:
/// the `(1-coverage)/2` and `(1+coverage)/2` quantiles of
/// `Binomial(runs, level)`, divided by `runs`.
pub fn binomial_band(runs: usize, level: f64, coverage: f64) -> Result<(f64, f64)> {
    let dist = Binomial::new(level, runs as u64)
        .map_err(|e| DepError::InvalidParameter(e.to_string()))?;
    let tail = (1.0 - coverage) / 2.0;
    let quantile = |q: f64| (0..=runs as u64).find(|&k| dist.cdf(k) >= q).unwrap_or(runs as u64);
    Ok((
        quantile(tail) as f64 / runs as f64,
        quantile(1.0 - tail) as f64 / runs as f64,
    ))
}

/// Kolmogorov–Smirnov distance between the empirical law of `pvals` and U(0,1).
pub fn ks_uniform_distance(pvals: &[f64]) -> f64 {
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - u).max(u - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// 5% critical value of the one-sample KS statistic (Stephens' modified
/// asymptotic form).
pub fn ks_critical_05(runs: usize) -> f64 {
    let s = (runs as f64).sqrt();
    1.358 / (s + 0.12 + 0.11 / s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub test: String,
    pub model: String,
    pub n: usize,
    pub runs: usize,
    pub level: f64,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    /// Exact binomial 99% acceptance band for the rejection rate.
    pub band_low: f64,
    pub band_high: f64,
    pub within_band: bool,
    pub ks_distance: f64,
    pub ks_critical: Option<f64>,
    pub ks_uniform: Option<bool>,
}

pub fn write_calibration_csv<W: Write>(rows: &[CalibrationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| DepError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DepError::Csv(e.to_string()))
}

/// Size study on a null model.
pub fn calibrate(scenario: &ScenarioSpec) -> Result<Vec<CalibrationRow>> {
    if !scenario.model.is_null() {
        return Err(DepError::InvalidParameter(format!(
            "calibration needs a null model, got {}",
            scenario.model
        )));
    }
    let pvals = simulate_pvalues(scenario)?;
    let (lo, hi) = binomial_band(scenario.runs, scenario.level, 0.99)?;
    let enough = scenario.runs >= KS_MIN_RUNS;
    Ok(scenario
        .tests
        .iter()
        .zip(&pvals)
        .map(|(t, p)| {
            let row = PowerRow::from_pvalues(*t, scenario, p);
            let ks = ks_uniform_distance(p);
            let crit = enough.then(|| ks_critical_05(scenario.runs));
            CalibrationRow {
                within_band: row.rate >= lo && row.rate <= hi,
                test: row.test,
                model: row.model,
                n: row.n,
                runs: row.runs,
                level: row.level,
                rejections: row.rejections,
                rate: row.rate,
                se: row.se,
                band_low: lo,
                band_high: hi,
                ks_distance: ks,
                ks_critical: crit,
                ks_uniform: crit.map(|c| ks <= c),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiscalibrationReport {
    pub phi: f64,
    pub n: usize,
    pub runs: usize,
    pub reps: usize,
    pub lag: usize,
    pub alpha: f64,
    pub seed: u64,
    pub level: f64,
    pub mean_phi_hat: f64,
    pub bootstrap_rejection_rate: f64,
    pub naive_rejection_rate: f64,
    pub bootstrap_ks: Option<f64>,
    pub naive_ks: Option<f64>,
    pub ks_critical: Option<f64>,
    pub bootstrap_calibrated: Option<bool>,
    pub naive_calibrated: Option<bool>,
    pub insufficient_runs: bool,
    pub bootstrap_p_values: Vec<f64>,
    pub naive_p_values: Vec<f64>,
}

impl MiscalibrationReport {
    /// One row per run: `run,naive_p,bootstrap_p`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| DepError::Csv(e.to_string());
        w.write_record(["run", "naive_p", "bootstrap_p"]).map_err(err)?;
        for (r, (a, b)) in self.naive_p_values.iter().zip(&self.bootstrap_p_values).enumerate() {
            w.serialize((r, a, b)).map_err(err)?;
        }
        w.flush().map_err(|e| DepError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiscalibrationConfig {
    pub phi: f64,
    pub n: usize,
    pub runs: usize,
    pub reps: usize,
    pub alpha: Exponent,
    pub level: f64,
    pub seed: u64,
}

impl MiscalibrationConfig {
    pub fn new(phi: f64, n: usize, runs: usize, seed: u64) -> Self {
        Self {
            phi,
            n,
            runs,
            reps: STUDY_REPS,
            alpha: Exponent::default(),
            level: 0.05,
            seed,
        }
    }
}

/// Lag-1 residual distance-autocovariance p-values of simulated AR(1)
/// data, computed by naive time permutation of the residuals and by the
/// parametric bootstrap.
pub fn residual_miscalibration_study(cfg: &MiscalibrationConfig) -> Result<MiscalibrationReport> {
    Model::Ar1 { phi: cfg.phi }.validate()?;
    if cfg.runs == 0 || cfg.reps == 0 {
        return Err(DepError::InvalidParameter("runs and reps must be >= 1".into()));
    }
    let lag = 1;
    let per_run: Vec<(f64, f64, f64)> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = make_stream(cfg.seed, r as u64);
            let test_seed = rng.next_u64();
            let series = simulate_ar1(cfg.n, &[0.0], cfg.phi, &mut rng, |r, e| e[0] = normal(r))?;
            let boot_plan = ResamplingPlan::new(Scheme::ParametricBootstrapAr1, cfg.reps, test_seed);
            let boot = residual_serial_test(&series, lag, cfg.alpha, None, &boot_plan)?;
            let resid = SeriesSample::new(fit_ar1(&series, None)?.residuals)?;
            let perm_plan = ResamplingPlan::new(Scheme::PermuteTimeIndex, cfg.reps, test_seed);
            let naive = acov_spectrum(&resid, lag, cfg.alpha, &perm_plan)?;
            let first = |v: Option<Vec<f64>>| v.map(|p| p[0]).unwrap_or(1.0);
            Ok((boot.fit.phi, first(boot.spectrum.p_values), first(naive.p_values)))
        })
        .collect::<Result<_>>()?;
    let boot: Vec<f64> = per_run.iter().map(|r| r.1).collect();
    let naive: Vec<f64> = per_run.iter().map(|r| r.2).collect();
    let rate = |p: &[f64]| p.iter().filter(|&&v| v <= cfg.level).count() as f64 / p.len() as f64;
    let enough = cfg.runs >= KS_MIN_RUNS;
    let crit = enough.then(|| ks_critical_05(cfg.runs));
    let bks = enough.then(|| ks_uniform_distance(&boot));
    let nks = enough.then(|| ks_uniform_distance(&naive));
    Ok(MiscalibrationReport {
        phi: cfg.phi,
        n: cfg.n,
        runs: cfg.runs,
        reps: cfg.reps,
        lag,
        alpha: cfg.alpha.value(),
        seed: cfg.seed,
        level: cfg.level,
        mean_phi_hat: exact_sum(per_run.iter().map(|r| r.0)) / cfg.runs as f64,
        bootstrap_rejection_rate: rate(&boot),
        naive_rejection_rate: rate(&naive),
        bootstrap_ks: bks,
        naive_ks: nks,
        ks_critical: crit,
        bootstrap_calibrated: bks.zip(crit).map(|(d, c)| d <= c),
        naive_calibrated: nks.zip(crit).map(|(d, c)| d <= c),
        insufficient_runs: !enough,
        bootstrap_p_values: boot,
        naive_p_values: naive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcov::{dcor, CenteredKernel};

    #[test]
    fn model_parsing() {
        assert_eq!(Model::parse("independent").unwrap(), Model::Independent { d: 2 });
        assert_eq!(Model::parse("independent:3").unwrap(), Model::Independent { d: 3 });
        assert_eq!(Model::parse("gaussian-rho:0.5").unwrap(), Model::GaussianRho { rho: 0.5 });
        assert!(Model::parse("gaussian-rho:1.0").is_err());
        assert!(Model::parse("ar1:-1").is_err());
        assert!(Model::parse("quadratic:-0.1").is_err());
        assert!(Model::parse("quadratic").is_err());
        assert!(Model::parse("banana:1").is_err());
        assert_eq!(TestKind::parse("portmanteau:3").unwrap(), TestKind::Portmanteau { lags: 3 });
        assert!(TestKind::parse("portmanteau:0").is_err());
        assert!(TestKind::parse("nope").is_err());
    }

    #[test]
    fn generators_have_expected_shape() {
        let mut rng = make_stream(1, 0);
        match generate(Model::GaussianRho { rho: 0.0 }, Margin::Identity, 30, &mut rng).unwrap() {
            Sample::Blocks(b) => assert_eq!((b.n(), b.dims()), (30, vec![1, 1])),
            _ => panic!(),
        }
        match generate(Model::Independent { d: 3 }, Margin::Cube, 10, &mut rng).unwrap() {
            Sample::Blocks(b) => assert_eq!(b.d(), 3),
            _ => panic!(),
        }
        match generate(Model::Ar1 { phi: 0.0 }, Margin::Identity, 40, &mut rng).unwrap() {
            Sample::Series(s) => assert_eq!(s.len(), 40),
            _ => panic!(),
        }
        let mut rng = make_stream(1, 1);
        match generate(Model::Quadratic { sigma: 0.0 }, Margin::Identity, 20, &mut rng).unwrap() {
            Sample::Blocks(b) => {
                for i in 0..20 {
                    let x = b.block(0).get(i, 0);
                    assert_eq!(b.block(1).get(i, 0), x * x);
                }
            }
            _ => panic!(),
        }
        assert!(generate(Model::Ar1 { phi: 1.0 }, Margin::Identity, 10, &mut rng).is_err());
    }

    #[test]
    fn quadratic_has_high_dcor_low_correlation() {
        let mut dcors = Vec::new();
        let mut cors = Vec::new();
        for r in 0..50 {
            let mut rng = make_stream(17, r);
            let Sample::Blocks(b) = generate(Model::Quadratic { sigma: 0.0 }, Margin::Identity, 200, &mut rng).unwrap() else {
                panic!()
            };
            let a = Exponent::default();
            dcors.push(dcor(&CenteredKernel::from_block(b.block(0), a), &CenteredKernel::from_block(b.block(1), a)).unwrap());
            let x = b.block(0).column(0);
            let y = b.block(1).column(0);
            let mx = x.iter().sum::<f64>() / 200.0;
            let my = y.iter().sum::<f64>() / 200.0;
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            cors.push(sxy / (sxx * syy).sqrt());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&dcors) - 0.31).abs() < 0.04, "{}", mean(&dcors));
        assert!(mean(&cors).abs() < 0.05, "{}", mean(&cors));
    }

    #[test]
    fn binomial_band_exact_quantiles() {
        let (lo, hi) = binomial_band(500, 0.05, 0.99).unwrap();
        assert_eq!((lo, hi), (13.0 / 500.0, 38.0 / 500.0));
    }

    #[test]
    fn ks_distance_of_grid_is_small() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert!((ks_uniform_distance(&grid) - 0.01).abs() < 1e-12);
        assert!(ks_uniform_distance(&[1.0; 20]) > 0.9);
        assert!((ks_critical_05(300) - 0.0778).abs() < 1e-3);
    }

    #[test]
    fn calibrate_rejects_alternative_and_is_reproducible() {
        let sc = ScenarioSpec::new(Model::GaussianRho { rho: 0.3 }, 20, vec![TestKind::Dcov], 1);
        assert!(calibrate(&sc).is_err());
        let mut sc = ScenarioSpec::new(Model::Independent { d: 2 }, 20, vec![TestKind::Dcov, TestKind::Cvm], 5);
        sc.runs = 12;
        sc.reps = 19;
        let a = calibrate(&sc).unwrap();
        let b = calibrate(&sc).unwrap();
        assert_eq!(a, b);
        assert!(a[0].ks_critical.is_some());
        let mut buf = Vec::new();
        write_calibration_csv(&a, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        sc.runs = 1;
        assert!(calibrate(&sc).unwrap()[0].ks_uniform.is_none());
    }

    #[test]
    fn incompatible_model_and_test() {
        let mut sc = ScenarioSpec::new(Model::Ar1 { phi: 0.0 }, 20, vec![TestKind::Dcov], 1);
        sc.runs = 2;
        sc.reps = 5;
        assert!(simulate_pvalues(&sc).is_err());
        let mut sc = ScenarioSpec::new(Model::Independent { d: 2 }, 20, vec![TestKind::Portmanteau { lags: 2 }], 1);
        sc.runs = 2;
        sc.reps = 5;
        assert!(simulate_pvalues(&sc).is_err());
    }

    #[test]
    fn power_table_csv() {
        let mut sc = ScenarioSpec::new(Model::Quadratic { sigma: 0.3 }, 30, vec![TestKind::Dcov, TestKind::Pearson], 2);
        sc.runs = 8;
        sc.reps = 19;
        let table = power_curve(&[sc]).unwrap();
        assert_eq!(table.rows.len(), 2);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("test,model,n,runs,level,rejections,rate,se\n"));
        assert!(table.find("dcov", "quadratic:0.3", 30).is_some());
    }

    #[test]
    fn miscalibration_single_run_has_no_verdict() {
        let mut cfg = MiscalibrationConfig::new(0.5, 60, 1, 3);
        cfg.reps = 9;
        let rep = residual_miscalibration_study(&cfg).unwrap();
        assert!(rep.insufficient_runs);
        assert!(rep.bootstrap_calibrated.is_none());
        assert_eq!(rep.bootstrap_p_values.len(), 1);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
        assert!(residual_miscalibration_study(&MiscalibrationConfig::new(1.2, 60, 1, 3)).is_err());
    }
}
