//! Serial dependence: distance autocovariance, portmanteau and
//! lag-window Möbius tests, AR(1) fitting and residual-based tests.
//!
//! Lag `l` pairs `(Z_t, Z_{t+l})` for all `t` with both ends observed, so
//! `V_n²(l)` is computed on `m = n - l` pairs and normalized by `m`.

use rand::Rng;
use serde::Serialize;

use crate::data::{BlockSample, DataMatrix};
use crate::dcov::{
    cf_subset_values, double_center_into, dcov_stat, pairwise_distances, symmetric_inner,
    CenteredKernel, Exponent, SquareMatrix,
};
use crate::error::{DepError, Result};
use crate::resampling::{
    coordinate_pvalues, random_permutation, replicate_vectors, try_replicate_vectors,
    ResamplingPlan, Scheme, StreamRng, RNG_ALGORITHM,
};
use crate::subset::{all_subsets, assemble, MobiusResult};
use crate::sum::exact_sum;

/// Steps discarded before a simulated AR(1) path is kept.
pub const BURN_IN: usize = 100;

/// Time-ordered multivariate series, row `t` = observation at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    values: DataMatrix,
}

impl SeriesSample {
    pub fn new(values: DataMatrix) -> Result<Self> {
        if values.nrows() < 3 {
            return Err(DepError::TooFewRows {
                n: values.nrows(),
                min: 3,
            });
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DataMatrix::from_column(values)?)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DataMatrix {
        &self.values
    }

    pub fn reversed(&self) -> Self {
        let perm: Vec<usize> = (0..self.len()).rev().collect();
        Self {
            values: self.values.permute_rows(&perm),
        }
    }

    fn check_lag(&self, lag: usize) -> Result<()> {
        let n = self.len();
        if lag == 0 || lag + 2 > n {
            return Err(DepError::LagOutOfRange {
                lag,
                max: n - 2,
                n,
            });
        }
        Ok(())
    }
}

/// `(Z_t, Z_{t+l})` for `t = 0..n-l` as two matrices.
pub fn lag_pairs(series: &SeriesSample, lag: usize) -> Result<(DataMatrix, DataMatrix)> {
    series.check_lag(lag)?;
    let n = series.len();
    Ok((
        series.values.slice_rows(0, n - lag)?,
        series.values.slice_rows(lag, n)?,
    ))
}

/// Distance autocovariance `V_m²(l)` on the `m = n - l` lag pairs.
pub fn lag_dcov(series: &SeriesSample, lag: usize, alpha: Exponent) -> Result<f64> {
    let (x, y) = lag_pairs(series, lag)?;
    dcov_stat(
        &CenteredKernel::from_block(&x, alpha),
        &CenteredKernel::from_block(&y, alpha),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSpectrum {
    pub max_lag: usize,
    /// `V_n²(l)` for `l = 1..=max_lag`.
    pub values: Vec<f64>,
    pub p_values: Option<Vec<f64>>,
    /// `Σ_l (n - l) V_n²(l)`.
    pub portmanteau: f64,
    pub portmanteau_p_value: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub alpha: f64,
    pub scheme: &'static str,
    pub rng: &'static str,
}

/// Scratch buffers for repeated lag computations on one distance matrix.
struct LagScratch {
    dx: Vec<f64>,
    dy: Vec<f64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    means: Vec<f64>,
}

impl LagScratch {
    fn new(n: usize) -> Self {
        Self {
            dx: Vec::with_capacity(n * n),
            dy: Vec::with_capacity(n * n),
            kx: vec![0.0; n * n],
            ky: vec![0.0; n * n],
            means: Vec::with_capacity(n),
        }
    }
}

fn gather_into(d: &SquareMatrix, idx: &[usize], out: &mut Vec<f64>) {
    let n = d.n();
    let src = d.as_slice();
    out.clear();
    for &a in idx {
        let row = &src[a * n..(a + 1) * n];
        out.extend(idx.iter().map(|&b| row[b]));
    }
}

/// `[V²(1), …, V²(L), Σ (n-l) V²(l)]` for the series reordered by `perm`.
fn spectrum_from_distances(
    d: &SquareMatrix,
    perm: &[usize],
    max_lag: usize,
    scratch: &mut LagScratch,
) -> Vec<f64> {
    let n = perm.len();
    let mut out = Vec::with_capacity(max_lag + 1);
    let mut portmanteau = 0.0;
    for lag in 1..=max_lag {
        let m = n - lag;
        gather_into(d, &perm[..m], &mut scratch.dx);
        gather_into(d, &perm[lag..], &mut scratch.dy);
        double_center_into(&scratch.dx, m, &mut scratch.kx[..m * m], &mut scratch.means);
        double_center_into(&scratch.dy, m, &mut scratch.ky[..m * m], &mut scratch.means);
        let v = (symmetric_inner(&scratch.kx[..m * m], &scratch.ky[..m * m], m)
            / (m as f64 * m as f64))
            .max(0.0);
        portmanteau += m as f64 * v;
        out.push(v);
    }
    out.push(portmanteau);
    out
}

fn check_max_lag(series: &SeriesSample, max_lag: usize) -> Result<()> {
    series.check_lag(max_lag.max(1))?;
    if max_lag == 0 {
        return Err(DepError::LagOutOfRange {
            lag: 0,
            max: series.len() - 2,
            n: series.len(),
        });
    }
    Ok(())
}

fn spectrum_result(
    observed: Vec<f64>,
    replicates: &[Vec<f64>],
    plan: &ResamplingPlan,
    n: usize,
    alpha: Exponent,
) -> LagSpectrum {
    let max_lag = observed.len() - 1;
    let pvals = (plan.reps > 0).then(|| coordinate_pvalues(&observed, replicates));
    LagSpectrum {
        max_lag,
        values: observed[..max_lag].to_vec(),
        p_values: pvals.as_ref().map(|p| p[..max_lag].to_vec()),
        portmanteau: observed[max_lag],
        portmanteau_p_value: pvals.as_ref().map(|p| p[max_lag]),
        reps: plan.reps,
        seed: plan.seed,
        n,
        alpha: alpha.value(),
        scheme: plan.scheme.name(),
        rng: RNG_ALGORITHM,
    }
}

/// Distance autocovariance spectrum for lags `1..=max_lag` with the
/// portmanteau statistic; p-values by permuting the time index, which is
/// exact under an iid null.
pub fn acov_spectrum(
    series: &SeriesSample,
    max_lag: usize,
    alpha: Exponent,
    plan: &ResamplingPlan,
) -> Result<LagSpectrum> {
    check_max_lag(series, max_lag)?;
    plan.require(&[Scheme::PermuteTimeIndex], "acov-spectrum")?;
    let n = series.len();
    let d = pairwise_distances(&series.values, alpha);
    let identity: Vec<usize> = (0..n).collect();
    let observed = spectrum_from_distances(&d, &identity, max_lag, &mut LagScratch::new(n));
    let replicates = replicate_vectors(plan, |rng| {
        let perm = random_permutation(n, rng);
        spectrum_from_distances(&d, &perm, max_lag, &mut LagScratch::new(n))
    });
    Ok(spectrum_result(observed, &replicates, plan, n, alpha))
}

/// Sliding windows `(Z_t, …, Z_{t+m-1})` as an `m`-block sample.
pub fn lag_windows(series: &SeriesSample, window: usize) -> Result<BlockSample> {
    let n = series.len();
    if !(2..=6).contains(&window) || n < window + 9 {
        return Err(DepError::WindowTooLarge { window, n });
    }
    let rows = n - window + 1;
    let blocks: Vec<DataMatrix> = (0..window)
        .map(|k| series.values.slice_rows(k, k + rows))
        .collect::<Result<_>>()?;
    BlockSample::from_blocks(&blocks)
}

fn window_values(
    d: &SquareMatrix,
    perm: &[usize],
    window: usize,
    subsets: &[crate::subset::Subset],
) -> Vec<f64> {
    let rows = perm.len() - window + 1;
    let mut means = Vec::with_capacity(rows);
    let mut buf = Vec::with_capacity(rows * rows);
    let kernels: Vec<Vec<f64>> = (0..window)
        .map(|k| {
            gather_into(d, &perm[k..k + rows], &mut buf);
            let mut kern = vec![0.0; rows * rows];
            double_center_into(&buf, rows, &mut kern, &mut means);
            kern
        })
        .collect();
    let refs: Vec<&[f64]> = kernels.iter().map(Vec::as_slice).collect();
    cf_subset_values(&refs, rows, subsets)
}

/// Möbius distance-covariance test of independence between `m` consecutive
/// observations, with time-index permutation as the null resampling.
pub fn lag_embed_mobius(
    series: &SeriesSample,
    window: usize,
    alpha: Exponent,
    plan: &ResamplingPlan,
) -> Result<MobiusResult> {
    let n = series.len();
    if !(2..=6).contains(&window) || n < window + 9 {
        return Err(DepError::WindowTooLarge { window, n });
    }
    plan.require(&[Scheme::PermuteTimeIndex], "lag-embed-mobius")?;
    let subsets = all_subsets(window);
    let d = pairwise_distances(&series.values, alpha);
    let identity: Vec<usize> = (0..n).collect();
    let observed = window_values(&d, &identity, window, &subsets);
    let replicates = replicate_vectors(plan, |rng| {
        window_values(&d, &random_permutation(n, rng), window, &subsets)
    });
    Ok(assemble(
        "lag-embed-mobius",
        &subsets,
        observed,
        &replicates,
        plan,
        n - window + 1,
        window,
        Some(alpha.value()),
    ))
}

/// Conditional least-squares AR(1) fit `Z_t = μ + φ(Z_{t-1} - μ) + ε_t`
/// with a scalar `φ` shared across coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArFit {
    pub mu: Vec<f64>,
    pub phi: f64,
    #[serde(skip)]
    pub residuals: DataMatrix,
}

impl ArFit {
    /// Residuals minus their per-coordinate mean.
    pub fn centered_residuals(&self) -> DataMatrix {
        let r = &self.residuals;
        let means: Vec<f64> = (0..r.ncols())
            .map(|j| exact_sum(r.column(j)) / r.nrows() as f64)
            .collect();
        let values: Vec<f64> = (0..r.nrows())
            .flat_map(|i| r.row(i).iter().zip(&means).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect();
        DataMatrix::new(values, r.nrows(), r.ncols()).expect("same shape as residuals")
    }
}

pub fn fit_ar1(series: &SeriesSample, mu_known: Option<&[f64]>) -> Result<ArFit> {
    let z = &series.values;
    let (n, p) = (z.nrows(), z.ncols());
    let mu: Vec<f64> = match mu_known {
        Some(mu) if mu.len() != p => {
            return Err(DepError::DimensionMismatch {
                expected: p,
                found: mu.len(),
            })
        }
        Some(mu) => mu.to_vec(),
        None => (0..p).map(|j| exact_sum(z.column(j)) / n as f64).collect(),
    };
    let centered = |t: usize, j: usize| z.get(t, j) - mu[j];
    let num = exact_sum((1..n).flat_map(|t| (0..p).map(move |j| (t, j))).map(|(t, j)| centered(t, j) * centered(t - 1, j)));
    let den = exact_sum((1..n).flat_map(|t| (0..p).map(move |j| (t, j))).map(|(t, j)| centered(t - 1, j).powi(2)));
    if den == 0.0 {
        return Err(DepError::ConstantSeries);
    }
    let phi = num / den;
    let mut resid = Vec::with_capacity((n - 1) * p);
    for t in 1..n {
        for j in 0..p {
            resid.push(centered(t, j) - phi * centered(t - 1, j));
        }
    }
    Ok(ArFit {
        mu,
        phi,
        residuals: DataMatrix::new(resid, n - 1, p)?,
    })
}

/// Simulate `n` steps of an AR(1) started at `mu`, discarding [`BURN_IN`]
/// steps; `innovation` writes one innovation vector per call.
pub fn simulate_ar1<R: Rng + ?Sized>(
    n: usize,
    mu: &[f64],
    phi: f64,
    rng: &mut R,
    mut innovation: impl FnMut(&mut R, &mut [f64]),
) -> Result<SeriesSample> {
    if phi.is_nan() || phi.abs() >= 1.0 {
        return Err(DepError::InvalidParameter(format!(
            "AR(1) simulation needs |phi| < 1, got {phi}"
        )));
    }
    let p = mu.len();
    let mut state = mu.to_vec();
    let mut eps = vec![0.0; p];
    let mut out = Vec::with_capacity(n * p);
    for step in 0..BURN_IN + n {
        innovation(rng, &mut eps);
        for j in 0..p {
            state[j] = mu[j] + phi * (state[j] - mu[j]) + eps[j];
        }
        if step >= BURN_IN {
            out.extend_from_slice(&state);
        }
    }
    SeriesSample::new(DataMatrix::new(out, n, p)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSpectrum {
    pub fit: ArFit,
    pub spectrum: LagSpectrum,
}

fn residual_spectrum_values(
    series: &SeriesSample,
    mu_known: Option<&[f64]>,
    max_lag: usize,
    alpha: Exponent,
) -> Result<(ArFit, Vec<f64>)> {
    let fit = fit_ar1(series, mu_known)?;
    let resid = SeriesSample::new(fit.residuals.clone())?;
    check_max_lag(&resid, max_lag)?;
    let m = resid.len();
    let d = pairwise_distances(resid.values(), alpha);
    let identity: Vec<usize> = (0..m).collect();
    let values = spectrum_from_distances(&d, &identity, max_lag, &mut LagScratch::new(m));
    Ok((fit, values))
}

/// Residual distance-autocovariance spectrum after an AR(1) fit, with
/// p-values from a parametric bootstrap: innovations are drawn with
/// replacement from the centered residuals, the fitted recursion is
/// simulated, refitted and the spectrum recomputed.
pub fn residual_serial_test(
    series: &SeriesSample,
    max_lag: usize,
    alpha: Exponent,
    mu_known: Option<&[f64]>,
    plan: &ResamplingPlan,
) -> Result<ResidualSpectrum> {
    plan.require(&[Scheme::ParametricBootstrapAr1], "residual-serial")?;
    let (fit, observed) = residual_spectrum_values(series, mu_known, max_lag, alpha)?;
    let n = series.len();
    let replicates = if plan.reps > 0 {
        if fit.phi.is_nan() || fit.phi.abs() >= 1.0 {
            return Err(DepError::InvalidParameter(format!(
                "fitted phi = {} is not stationary; cannot bootstrap",
                fit.phi
            )));
        }
        let innovations = fit.centered_residuals();
        let pool = innovations.nrows();
        try_replicate_vectors(plan, |rng: &mut StreamRng| {
            let sim = simulate_ar1(n, &fit.mu, fit.phi, rng, |rng, eps| {
                eps.copy_from_slice(innovations.row(rng.random_range(0..pool)));
            })?;
            Ok(residual_spectrum_values(&sim, mu_known, max_lag, alpha)?.1)
        })?
    } else {
        Vec::new()
    };
    let spectrum = spectrum_result(observed, &replicates, plan, n - 1, alpha);
    Ok(ResidualSpectrum { fit, spectrum })
}
