//! Empirical-CDF statistics: the two-sample Cramér–von Mises functional
//! `B_n`, its `d`-block analogue, and Möbius-decomposed CDF statistics.
//!
//! Everything is expressed through per-block "≤" indicator matrices
//! `L[j][i] = 1(Z_j ≤ Z_i componentwise)`, so a row permutation of a block
//! permutes both indices of its matrix.

use crate::data::{BlockSample, DataMatrix, MAX_BLOCKS};
use crate::error::{DepError, Result};
use crate::resampling::{
    random_permutation, replicate_statistics, replicate_vectors, ResamplingPlan, Scheme,
    TestResult,
};
use crate::subset::{all_subsets, assemble, subset_products, MobiusResult, Subset};
use crate::sum::ExactSum;

/// `(1/n) #{rows ≤ point componentwise}`.
pub fn ecdf(data: &DataMatrix, point: &[f64]) -> Result<f64> {
    if point.len() != data.ncols() {
        return Err(DepError::DimensionMismatch {
            expected: data.ncols(),
            found: point.len(),
        });
    }
    let count = (0..data.nrows())
        .filter(|&i| data.row(i).iter().zip(point).all(|(z, p)| z <= p))
        .count();
    Ok(count as f64 / data.nrows() as f64)
}

/// Componentwise-≤ structure of one block.
#[derive(Debug, Clone)]
struct Indicators {
    n: usize,
    /// `le[j * n + i] = Z_j ≤ Z_i`
    le: Vec<bool>,
    /// `counts[i] = n F_n(Z_i)`
    counts: Vec<u32>,
}

impl Indicators {
    fn new(block: &DataMatrix) -> Self {
        let n = block.nrows();
        let mut le = vec![false; n * n];
        let mut counts = vec![0u32; n];
        for j in 0..n {
            let zj = block.row(j);
            for i in 0..n {
                let below = zj.iter().zip(block.row(i)).all(|(a, b)| a <= b);
                le[j * n + i] = below;
                counts[i] += below as u32;
            }
        }
        Self { n, le, counts }
    }

    /// `C[j][i] = 1(Z_j ≤ Z_i) - F_n(Z_i)`
    fn centered(&self) -> Vec<f64> {
        let n = self.n;
        let nf = n as f64;
        let mut c = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let ind = if self.le[j * n + i] { 1.0 } else { 0.0 };
                c[j * n + i] = ind - self.counts[i] as f64 / nf;
            }
        }
        c
    }
}

fn check_rows(blocks: &[&DataMatrix]) -> Result<usize> {
    let n = blocks[0].nrows();
    for b in blocks {
        if b.nrows() != n {
            return Err(DepError::DimensionMismatch {
                expected: n,
                found: b.nrows(),
            });
        }
    }
    Ok(n)
}

/// `(1/n) Σ_i {H_n(Z_i) - Π_k F_{n,k}(Z_ik)}²` with block `k`'s rows taken
/// through `perms[k]` when given.
fn joint_from_indicators(inds: &[&Indicators], perms: &[Option<&[usize]>]) -> f64 {
    let n = inds[0].n;
    let nf = n as f64;
    let at = |k: usize, i: usize| perms[k].map_or(i, |p| p[i]);
    let mut acc = ExactSum::new();
    for i in 0..n {
        let mut joint = 0u32;
        for j in 0..n {
            let all = inds
                .iter()
                .enumerate()
                .all(|(k, ind)| ind.le[at(k, j) * n + at(k, i)]);
            joint += all as u32;
        }
        let mut marg = inds[0].counts[at(0, i)] as f64 / nf;
        for (k, ind) in inds.iter().enumerate().skip(1) {
            marg *= ind.counts[at(k, i)] as f64 / nf;
        }
        let diff = joint as f64 / nf - marg;
        acc.add(diff * diff);
    }
    acc.value() / nf
}

/// Cramér–von Mises independence functional
/// `B_n = (1/n) Σ_i {F_{XY}(X_i,Y_i) - F_X(X_i) F_Y(Y_i)}²`.
pub fn bn_stat(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    check_rows(&[x, y])?;
    let ix = Indicators::new(x);
    let iy = Indicators::new(y);
    Ok(joint_from_indicators(&[&ix, &iy], &[None, None]))
}

/// `d`-block version of [`bn_stat`] built on the joint empirical CDF.
pub fn joint_cvm(sample: &BlockSample) -> Result<f64> {
    if sample.d() < 2 {
        return Err(DepError::BlockCount {
            d: sample.d(),
            min: 2,
            max: MAX_BLOCKS,
        });
    }
    let inds: Vec<Indicators> = sample.blocks().iter().map(Indicators::new).collect();
    let refs: Vec<&Indicators> = inds.iter().collect();
    let perms = vec![None; refs.len()];
    Ok(joint_from_indicators(&refs, &perms))
}

/// Möbius CDF statistics for each subset from centered indicator matrices:
/// `T_A = (1/n) Σ_i G_A(Z_i)²`, `G_A(z) = (1/n) Σ_j Π_{k∈A} C_k[j][z]`.
pub(crate) fn cvm_subset_values(cmats: &[&[f64]], n: usize, subsets: &[Subset]) -> Vec<f64> {
    let d = cmats.len();
    let nf = n as f64;
    let mut vals = vec![0.0; d];
    let mut prod = vec![0.0; 1 << d];
    let mut inner: Vec<ExactSum> = subsets.iter().map(|_| ExactSum::new()).collect();
    let mut outer: Vec<ExactSum> = subsets.iter().map(|_| ExactSum::new()).collect();
    for i in 0..n {
        inner.iter_mut().for_each(ExactSum::clear);
        for j in 0..n {
            for (v, c) in vals.iter_mut().zip(cmats) {
                *v = c[j * n + i];
            }
            subset_products(&vals, &mut prod);
            for (acc, s) in inner.iter_mut().zip(subsets) {
                acc.add(prod[s.mask() as usize]);
            }
        }
        for (o, acc) in outer.iter_mut().zip(&inner) {
            let g = acc.value() / nf;
            o.add(g * g);
        }
    }
    outer.iter().map(|o| o.value() / nf).collect()
}

fn permute_square(m: &[f64], n: usize, perm: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for &a in perm {
        out.extend(perm.iter().map(|&b| m[a * n + b]));
    }
    out
}

/// Möbius CDF statistic `T_{n,A}` for one subset; `n T_{n,A}` is the
/// test statistic.
pub fn mobius_cvm(sample: &BlockSample, subset: Subset) -> Result<f64> {
    subset.validate(sample.d())?;
    let cmats: Vec<Vec<f64>> = subset
        .blocks()
        .into_iter()
        .map(|k| Indicators::new(sample.block(k)).centered())
        .collect();
    let refs: Vec<&[f64]> = cmats.iter().map(Vec::as_slice).collect();
    let whole = Subset::from_mask((1u32 << refs.len()) - 1);
    Ok(cvm_subset_values(&refs, sample.n(), &[whole])[0])
}

/// All Möbius CDF subset statistics with permutation p-values and Fisher
/// combination.
pub fn mobius_cvm_all_subsets(
    sample: &BlockSample,
    plan: &ResamplingPlan,
    method: &str,
) -> Result<MobiusResult> {
    let d = sample.d();
    if !(2..=MAX_BLOCKS).contains(&d) {
        return Err(DepError::BlockCount {
            d,
            min: 2,
            max: MAX_BLOCKS,
        });
    }
    plan.require(&[Scheme::PermuteBlocksIndependently], method)?;
    let n = sample.n();
    let subsets = all_subsets(d);
    let cmats: Vec<Vec<f64>> = sample
        .blocks()
        .iter()
        .map(|b| Indicators::new(b).centered())
        .collect();
    let refs: Vec<&[f64]> = cmats.iter().map(Vec::as_slice).collect();
    let observed = cvm_subset_values(&refs, n, &subsets);
    let replicates = replicate_vectors(plan, |rng| {
        let permuted: Vec<Vec<f64>> = cmats
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == 0 {
                    c.clone()
                } else {
                    permute_square(c, n, &random_permutation(n, rng))
                }
            })
            .collect();
        let refs: Vec<&[f64]> = permuted.iter().map(Vec::as_slice).collect();
        cvm_subset_values(&refs, n, &subsets)
    });
    Ok(assemble(method, &subsets, observed, &replicates, plan, n, d, None))
}

/// Two-block `B_n` test, permuting the rows of block 2. `statistic` is `B_n`.
pub fn cvm_test(sample: &BlockSample, plan: &ResamplingPlan, method: &str) -> Result<TestResult> {
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
    let n = sample.n();
    let ix = Indicators::new(sample.block(0));
    let iy = Indicators::new(sample.block(1));
    let observed = joint_from_indicators(&[&ix, &iy], &[None, None]);
    let replicates = replicate_statistics(plan, |rng| {
        let perm = random_permutation(n, rng);
        joint_from_indicators(&[&ix, &iy], &[None, Some(&perm)])
    });
    Ok(TestResult::from_replicates(method, observed, replicates, plan, n))
}
