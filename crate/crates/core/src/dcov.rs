//! Distance covariance kernels.
//!
//! A block's kernel is its double-centered α-distance matrix with the sign
//! flipped, `K = -(D - row mean - column mean + grand mean)`. With that
//! sign, `V_n² = n⁻² Σ Kx∘Ky`, and the multi-block statistic for a subset
//! `A` is `n⁻¹ Σ_ij Π_{k∈A} K⁽ᵏ⁾_ij`: the per-block kernels are exactly the
//! integrals of the centered characteristic-function products under the
//! factorized weight, so they multiply.
//!
//! All double sums are exact ([`crate::sum`]), and every kernel is
//! symmetric bit-for-bit, so off-diagonal pairs are summed once as `2 t_ij`.

use serde::Serialize;

use crate::data::{BlockSample, DataMatrix};
use crate::error::{DepError, Result};
use crate::resampling::{
    random_permutation, replicate_statistics, replicate_vectors, ResamplingPlan, Scheme,
    TestResult,
};
use crate::subset::{all_subsets, assemble, subset_products, MobiusResult, Subset};
use crate::sum::ExactSum;

/// Distance exponent, `0 < alpha < 2`. `alpha = 1` is Brownian distance
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Exponent(f64);

impl Exponent {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 2.0 {
            Ok(Self(alpha))
        } else {
            Err(DepError::InvalidExponent(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Exponent {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Square `n x n` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    values: Vec<f64>,
    n: usize,
}

impl SquareMatrix {
    pub fn new(values: Vec<f64>, n: usize) -> Result<Self> {
        if values.len() != n * n {
            return Err(DepError::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Ok(Self { values, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `out[a][b] = self[idx[a]][idx[b]]`; a permutation when `idx` covers
    /// `0..n`, a principal sub-matrix otherwise.
    pub fn permuted(&self, idx: &[usize]) -> Self {
        let n = self.n;
        let mut values = Vec::with_capacity(idx.len() * idx.len());
        for &a in idx {
            let row = &self.values[a * n..(a + 1) * n];
            values.extend(idx.iter().map(|&b| row[b]));
        }
        Self {
            values,
            n: idx.len(),
        }
    }
}

/// `D_ij = |z_i - z_j|^alpha` over the rows of `block`.
pub fn pairwise_distances(block: &DataMatrix, alpha: Exponent) -> SquareMatrix {
    let n = block.nrows();
    let p = block.ncols();
    let a = alpha.value();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let zi = block.row(i);
        for j in (i + 1)..n {
            let zj = block.row(j);
            let dist = if p == 1 {
                (zi[0] - zj[0]).abs()
            } else {
                zi.iter()
                    .zip(zj)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            };
            let v = if a == 1.0 { dist } else { dist.powf(a) };
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    SquareMatrix { values, n }
}

/// Double-centered kernel of one block, sign-flipped (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernel {
    matrix: SquareMatrix,
}

impl CenteredKernel {
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix.values
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// Kernel of the rows reordered by `perm`; identical to centering the
    /// permuted distance matrix.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            matrix: self.matrix.permuted(perm),
        }
    }

    /// Kernel of a block given its data.
    pub fn from_block(block: &DataMatrix, alpha: Exponent) -> Self {
        double_center(&pairwise_distances(block, alpha))
    }
}

/// `K_ij = (r_i + r_j) - (D_ij + g)` where `r` are row means and `g` the
/// grand mean of the symmetric matrix `D`.
pub fn double_center(d: &SquareMatrix) -> CenteredKernel {
    let mut buf = Vec::new();
    let mut values = vec![0.0; d.n * d.n];
    double_center_into(&d.values, d.n, &mut values, &mut buf);
    CenteredKernel {
        matrix: SquareMatrix { values, n: d.n },
    }
}

/// Centering kernel over a flat `n x n` slice; `means` is scratch space.
pub(crate) fn double_center_into(d: &[f64], n: usize, out: &mut [f64], means: &mut Vec<f64>) {
    let nf = n as f64;
    means.clear();
    let mut acc = ExactSum::new();
    for i in 0..n {
        acc.clear();
        acc.extend(d[i * n..(i + 1) * n].iter().copied());
        means.push(acc.value());
    }
    acc.clear();
    acc.extend(means.iter().copied());
    let grand = acc.value() / (nf * nf);
    for m in means.iter_mut() {
        *m /= nf;
    }
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (means[i] + means[j]) - (d[i * n + j] + grand);
        }
    }
}

/// Exact `Σ_ij a_ij b_ij` for symmetric `a`, `b`.
pub(crate) fn symmetric_inner(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut acc = ExactSum::new();
    for i in 0..n {
        acc.add(a[i * n + i] * b[i * n + i]);
        for j in (i + 1)..n {
            acc.add(2.0 * (a[i * n + j] * b[i * n + j]));
        }
    }
    acc.value()
}

fn same_size(a: &CenteredKernel, b: &CenteredKernel) -> Result<usize> {
    if a.n() != b.n() {
        return Err(DepError::DimensionMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    Ok(a.n())
}

/// Empirical distance covariance `V_n² = n⁻² Σ_ij Kx_ij Ky_ij`, clamped at 0.
pub fn dcov_stat(kx: &CenteredKernel, ky: &CenteredKernel) -> Result<f64> {
    let n = same_size(kx, ky)?;
    let s = symmetric_inner(kx.as_slice(), ky.as_slice(), n);
    Ok((s / (n as f64 * n as f64)).max(0.0))
}

/// Empirical distance correlation; 0 when either self-covariance vanishes.
pub fn dcor(kx: &CenteredKernel, ky: &CenteredKernel) -> Result<f64> {
    let vxy = dcov_stat(kx, ky)?;
    let vxx = dcov_stat(kx, kx)?;
    let vyy = dcov_stat(ky, ky)?;
    if vxx <= 0.0 || vyy <= 0.0 {
        return Ok(0.0);
    }
    Ok((vxy / (vxx * vyy).sqrt()).clamp(0.0, 1.0))
}

/// `n⁻¹ Σ_ij Π_k K⁽ᵏ⁾_ij` over the given kernels (in block order).
pub fn mobius_from_kernels(kernels: &[&CenteredKernel]) -> Result<f64> {
    if kernels.len() < 2 {
        return Err(DepError::SubsetTooSmall);
    }
    let n = kernels[0].n();
    for k in kernels {
        same_size(kernels[0], k)?;
    }
    let slices: Vec<&[f64]> = kernels.iter().map(|k| k.as_slice()).collect();
    let mut acc = ExactSum::new();
    for i in 0..n {
        for j in i..n {
            let idx = i * n + j;
            let mut prod = slices[0][idx];
            for s in &slices[1..] {
                prod *= s[idx];
            }
            acc.add(if i == j { prod } else { 2.0 * prod });
        }
    }
    Ok((acc.value() / n as f64).max(0.0))
}

/// Multi-block distance covariance `V_{n,A}` for the blocks in `subset`.
pub fn mobius_dcov(sample: &BlockSample, subset: Subset, alpha: Exponent) -> Result<f64> {
    subset.validate(sample.d())?;
    let kernels: Vec<CenteredKernel> = subset
        .blocks()
        .into_iter()
        .map(|k| CenteredKernel::from_block(sample.block(k), alpha))
        .collect();
    let refs: Vec<&CenteredKernel> = kernels.iter().collect();
    mobius_from_kernels(&refs)
}

/// Values of `V_{n,A}` for every subset in `subsets`, computed in one pass
/// over the pairs. `kernels` holds one flat `n x n` kernel per block.
pub(crate) fn cf_subset_values(kernels: &[&[f64]], n: usize, subsets: &[Subset]) -> Vec<f64> {
    let d = kernels.len();
    let mut vals = vec![0.0; d];
    let mut prod = vec![0.0; 1 << d];
    let mut acc: Vec<ExactSum> = subsets.iter().map(|_| ExactSum::new()).collect();
    for i in 0..n {
        for j in i..n {
            let idx = i * n + j;
            for (v, k) in vals.iter_mut().zip(kernels) {
                *v = k[idx];
            }
            subset_products(&vals, &mut prod);
            for (a, s) in acc.iter_mut().zip(subsets) {
                let t = prod[s.mask() as usize];
                a.add(if i == j { t } else { 2.0 * t });
            }
        }
    }
    acc.iter().map(|a| (a.value() / n as f64).max(0.0)).collect()
}

/// Two-block distance covariance test, permuting the rows of block 2.
///
/// `statistic` is `V_n²`; rank-based testing is done by passing
/// `sample.to_ranks()`.
pub fn dcov_test(
    sample: &BlockSample,
    alpha: Exponent,
    plan: &ResamplingPlan,
    method: &str,
) -> Result<TestResult> {
    if sample.d() != 2 {
        return Err(DepError::BlockCount {
            d: sample.d(),
            min: 2,
            max: 2,
        });
    }
    plan.require(
        &[Scheme::PermuteSecondBlock, Scheme::PermuteBlocksIndependently],
        method,
    )?;
    let kx = CenteredKernel::from_block(sample.block(0), alpha);
    let ky = CenteredKernel::from_block(sample.block(1), alpha);
    let n = sample.n();
    let nn = n as f64 * n as f64;
    let observed = dcov_stat(&kx, &ky)?;
    let replicates = replicate_statistics(plan, |rng| {
        let perm = random_permutation(n, rng);
        let kyp = ky.permuted(&perm);
        (symmetric_inner(kx.as_slice(), kyp.as_slice(), n) / nn).max(0.0)
    });
    Ok(TestResult::from_replicates(method, observed, replicates, plan, n).with_alpha(alpha.value()))
}

/// Every multi-block statistic `V_{n,A}` (`|A| >= 2`) with permutation
/// p-values and their Fisher combination.
pub fn mobius_all_subsets(
    sample: &BlockSample,
    alpha: Exponent,
    plan: &ResamplingPlan,
    method: &str,
) -> Result<MobiusResult> {
    let d = sample.d();
    if !(2..=crate::data::MAX_BLOCKS).contains(&d) {
        return Err(DepError::BlockCount {
            d,
            min: 2,
            max: crate::data::MAX_BLOCKS,
        });
    }
    plan.require(&[Scheme::PermuteBlocksIndependently], method)?;
    let n = sample.n();
    let subsets = all_subsets(d);
    let kernels: Vec<CenteredKernel> = sample
        .blocks()
        .iter()
        .map(|b| CenteredKernel::from_block(b, alpha))
        .collect();
    let slices: Vec<&[f64]> = kernels.iter().map(CenteredKernel::as_slice).collect();
    let observed = cf_subset_values(&slices, n, &subsets);
    let replicates = replicate_vectors(plan, |rng| {
        let permuted: Vec<CenteredKernel> = kernels
            .iter()
            .enumerate()
            .map(|(k, kern)| {
                if k == 0 {
                    kern.clone()
                } else {
                    kern.permuted(&random_permutation(n, rng))
                }
            })
            .collect();
        let slices: Vec<&[f64]> = permuted.iter().map(CenteredKernel::as_slice).collect();
        cf_subset_values(&slices, n, &subsets)
    });
    Ok(assemble(
        method,
        &subsets,
        observed,
        &replicates,
        plan,
        n,
        d,
        Some(alpha.value()),
    ))
}
