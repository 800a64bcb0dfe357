//! Block subsets for Möbius-decomposed statistics and their combination.

use serde::{Serialize, Serializer};

use crate::error::{DepError, Result};
use crate::resampling::{coordinate_pvalues, ResamplingPlan, RNG_ALGORITHM};
use crate::sum::exact_sum;

/// Subset of block indices, stored as a bitmask (bit `k` = block `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset(u32);

impl Subset {
    pub fn from_mask(mask: u32) -> Self {
        Self(mask)
    }

    pub fn from_blocks(blocks: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &b in blocks {
            if b >= 32 {
                return Err(DepError::UnknownBlock { index: b, d: 32 });
            }
            mask |= 1 << b;
        }
        Ok(Self(mask))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, block: usize) -> bool {
        block < 32 && self.0 & (1 << block) != 0
    }

    /// Block indices in ascending order.
    pub fn blocks(self) -> Vec<usize> {
        (0..32).filter(|&k| self.contains(k)).collect()
    }

    /// Checks `|A| >= 2` and that every block exists in a `d`-block sample.
    pub fn validate(self, d: usize) -> Result<()> {
        if self.len() < 2 {
            return Err(DepError::SubsetTooSmall);
        }
        if let Some(&bad) = self.blocks().iter().find(|&&k| k >= d) {
            return Err(DepError::UnknownBlock { index: bad, d });
        }
        Ok(())
    }
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.blocks().serialize(s)
    }
}

/// All subsets of `{0..d}` with at least two elements, ordered by size and
/// then lexicographically. There are `2^d - d - 1` of them.
pub fn all_subsets(d: usize) -> Vec<Subset> {
    let mut out = Vec::with_capacity((1usize << d).saturating_sub(d + 1));
    for size in 2..=d {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(Subset(combo.iter().fold(0, |m, &b| m | 1 << b)));
            // advance to the next combination in lexicographic order
            let mut i = size;
            while i > 0 && combo[i - 1] == d - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..size {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

/// Products over every non-empty sub-mask of `0..values.len()`, multiplied
/// in ascending block order: `prod[mask] = prod[mask without top bit] * value[top]`.
#[inline]
pub(crate) fn subset_products(values: &[f64], prod: &mut [f64]) {
    prod[0] = 1.0;
    for mask in 1..prod.len() {
        let top = 31 - (mask as u32).leading_zeros() as usize;
        let rest = mask & !(1 << top);
        prod[mask] = if rest == 0 {
            values[top]
        } else {
            prod[rest] * values[top]
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetStatistic {
    pub subset: Subset,
    pub value: f64,
    pub p_value: Option<f64>,
}

/// Per-subset statistics with Fisher-combined p-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobiusResult {
    pub method: String,
    pub subsets: Vec<SubsetStatistic>,
    /// `-2 Σ_A ln p_A` for the observed sample.
    pub combined_statistic: Option<f64>,
    pub combined_p_value: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub alpha: Option<f64>,
    pub scheme: &'static str,
    pub rng: &'static str,
}

/// Per-subset add-one p-values and the Fisher combination, calibrated on
/// the same replicates.
///
/// The observed sample and the replicates are pooled into `reps + 1`
/// exchangeable members. Each member gets per-subset p-values
/// `#{members >= it} / (reps + 1)`, and its Fisher statistic
/// `-2 Σ ln p`. The combined p-value is the add-one rank of the observed
/// Fisher statistic among the replicates' Fisher statistics.
pub fn fisher_combine(observed: &[f64], replicates: &[Vec<f64>]) -> (Vec<f64>, f64, f64) {
    let total = replicates.len() + 1;
    let per_subset = coordinate_pvalues(observed, replicates);
    let mut fisher = vec![Vec::with_capacity(observed.len()); total];
    for c in 0..observed.len() {
        let mut sorted: Vec<f64> = std::iter::once(observed[c])
            .chain(replicates.iter().map(|r| r[c]))
            .collect();
        sorted.sort_by(f64::total_cmp);
        let member_p = |v: f64| {
            let below = sorted.partition_point(|&s| s < v);
            (total - below) as f64 / total as f64
        };
        fisher[0].push(-2.0 * member_p(observed[c]).ln());
        for (m, r) in replicates.iter().enumerate() {
            fisher[m + 1].push(-2.0 * member_p(r[c]).ln());
        }
    }
    let w: Vec<f64> = fisher.into_iter().map(exact_sum).collect();
    let exceed = w[1..].iter().filter(|&&x| x >= w[0]).count();
    let combined_p = (1 + exceed) as f64 / total as f64;
    (per_subset, w[0], combined_p)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    method: &str,
    subsets: &[Subset],
    observed: Vec<f64>,
    replicates: &[Vec<f64>],
    plan: &ResamplingPlan,
    n: usize,
    d: usize,
    alpha: Option<f64>,
) -> MobiusResult {
    let (pvals, combined_statistic, combined_p_value) = if plan.reps > 0 {
        let (p, w, cp) = fisher_combine(&observed, replicates);
        (Some(p), Some(w), Some(cp))
    } else {
        (None, None, None)
    };
    MobiusResult {
        method: method.to_string(),
        subsets: subsets
            .iter()
            .zip(observed)
            .enumerate()
            .map(|(i, (&subset, value))| SubsetStatistic {
                subset,
                value,
                p_value: pvals.as_ref().map(|p| p[i]),
            })
            .collect(),
        combined_statistic,
        combined_p_value,
        reps: plan.reps,
        seed: plan.seed,
        n,
        d,
        alpha,
        scheme: plan.scheme.name(),
        rng: RNG_ALGORITHM,
    }
}
