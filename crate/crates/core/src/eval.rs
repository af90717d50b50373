//! Baselines, error metrics and heterogeneity tests.
//!
//! p-values come from `statrs`: the chi-squared survival function is the
//! regularized upper incomplete gamma `Q(dof / 2, x / 2)` and the normal tail
//! uses the complementary error function.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::codec::debias;
use crate::error::{Error, Result};
use crate::model::{Distribution, EstimateVector, HashedEstimate};

/// Debiased per-cluster hashed estimates, each using only its own data.
pub fn baseline_local(estimates: &[HashedEstimate], bits: u32) -> Result<Vec<EstimateVector>> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(estimates
        .iter()
        .map(|e| debias(e.as_estimate(), bits))
        .collect())
}

/// Debiased pooled estimate: the sample-size weighted mean of the `b̌^t`.
pub fn baseline_global(estimates: &[HashedEstimate], bits: u32) -> Result<EstimateVector> {
    let first = estimates.first().ok_or(Error::EmptyInput)?;
    let dim = first.dim();
    let mut pooled = vec![0u64; dim];
    let mut total = 0u64;
    for e in estimates {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        for (acc, c) in pooled.iter_mut().zip(e.counts()) {
            *acc += c;
        }
        total += e.sample_size();
    }
    let mean = EstimateVector::new(pooled.iter().map(|&c| c as f64 / total as f64).collect())?;
    Ok(debias(&mean, bits))
}

/// Average squared-l2 and l1 errors over clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub avg_l2_sq: f64,
    pub avg_l1: f64,
    /// `(l2^2, l1)` per cluster.
    pub per_cluster: Vec<(f64, f64)>,
    pub runs: usize,
    /// Standard error of `avg_l2_sq` across runs; zero for a single run.
    pub stderr: f64,
}

impl MetricSummary {
    /// Pools several runs: the averages are means of the run averages.
    pub fn combine(runs: &[MetricSummary]) -> Option<MetricSummary> {
        if runs.is_empty() {
            return None;
        }
        let r = runs.len() as f64;
        let avg_l2_sq = runs.iter().map(|m| m.avg_l2_sq).sum::<f64>() / r;
        let avg_l1 = runs.iter().map(|m| m.avg_l1).sum::<f64>() / r;
        let stderr = if runs.len() > 1 {
            let var = runs
                .iter()
                .map(|m| (m.avg_l2_sq - avg_l2_sq).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary {
            avg_l2_sq,
            avg_l1,
            per_cluster: runs.iter().flat_map(|m| m.per_cluster.clone()).collect(),
            runs: runs.len(),
            stderr,
        })
    }
}

pub fn metrics(truth: &[Distribution], estimates: &[EstimateVector]) -> Result<MetricSummary> {
    if truth.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: estimates.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_cluster = truth
        .iter()
        .zip(estimates)
        .map(|(p, q)| {
            if p.dim() != q.dim() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim(),
                    found: q.dim(),
                });
            }
            Ok(p.probs()
                .iter()
                .zip(q.values())
                .fold((0.0, 0.0), |(l2, l1), (a, b)| {
                    let e = a - b;
                    (l2 + e * e, l1 + e.abs())
                }))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = per_cluster.len() as f64;
    Ok(MetricSummary {
        avg_l2_sq: per_cluster.iter().map(|c| c.0).sum::<f64>() / t,
        avg_l1: per_cluster.iter().map(|c| c.1).sum::<f64>() / t,
        per_cluster,
        runs: 1,
        stderr: 0.0,
    })
}

/// `T^{-1} sum_t ||p^t - mean_t p^t||_2^2`, the error floor of pooling.
pub fn pooling_bias(truth: &[Distribution]) -> Result<f64> {
    let first = truth.first().ok_or(Error::EmptyInput)?;
    let dim = first.dim();
    let t = truth.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in truth {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        for (m, x) in mean.iter_mut().zip(p.probs()) {
            *m += x / t;
        }
    }
    Ok(truth
        .iter()
        .map(|p| {
            p.probs()
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / t)
}

/// Chi-squared survival function `P(X > x)` for `dof` degrees of freedom.
pub fn chi_squared_sf(x: f64, dof: usize) -> f64 {
    if dof == 0 || x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Two-sided standard normal tail `P(|Z| > |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Minimum pooled expected count for a bin to stand on its own.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-squared homogeneity test on count vectors.
///
/// Bins whose smaller expected count falls below [`MIN_EXPECTED`] are merged
/// into one remainder bin; a remainder that is still too small is folded into
/// the retained bin with the smallest expected count. Bins empty in both
/// samples are ignored.
pub fn chi_squared_two_sample(u: &[u64], v: &[u64]) -> Result<ChiSquaredResult> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu: u64 = u.iter().sum();
    let nv: u64 = v.iter().sum();
    if nu == 0 || nv == 0 {
        return Err(Error::DegenerateCounts(
            "a sample has no observations".into(),
        ));
    }
    let total = (nu + nv) as f64;
    let (fu, fv) = (nu as f64 / total, nv as f64 / total);
    let min_expected = |a: u64, b: u64| (a + b) as f64 * fu.min(fv);

    let mut bins: Vec<(u64, u64)> = Vec::with_capacity(u.len());
    let mut rest = (0u64, 0u64);
    for (&a, &b) in u.iter().zip(v) {
        if a + b == 0 {
            continue;
        }
        if min_expected(a, b) < MIN_EXPECTED {
            rest.0 += a;
            rest.1 += b;
        } else {
            bins.push((a, b));
        }
    }
    let cell_statistic = |(a, b): (u64, u64)| {
        let pooled = (a + b) as f64;
        let (eu, ev) = (pooled * fu, pooled * fv);
        (a as f64 - eu).powi(2) / eu + (b as f64 - ev).powi(2) / ev
    };
    if rest.0 + rest.1 > 0 {
        if min_expected(rest.0, rest.1) >= MIN_EXPECTED || bins.is_empty() {
            bins.push(rest);
        } else {
            // Among the smallest retained bins, absorb into the one giving the
            // smallest statistic so the result depends only on the multiset
            // of cells, not on their order or on which sample is first.
            let smallest = bins.iter().map(|&(a, b)| a + b).min().expect("non-empty");
            let target = bins
                .iter()
                .enumerate()
                .filter(|(_, &(a, b))| a + b == smallest)
                .map(|(i, &(a, b))| {
                    let merged = (a + rest.0, b + rest.1);
                    (i, cell_statistic(merged) - cell_statistic((a, b)))
                })
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            bins[target].0 += rest.0;
            bins[target].1 += rest.1;
        }
    }

    let statistic: f64 = bins.iter().map(|&c| cell_statistic(c)).sum();
    let dof = bins.len().saturating_sub(1);
    Ok(ChiSquaredResult {
        statistic,
        dof,
        p_value: chi_squared_sf(statistic, dof),
    })
}

/// Upper-triangular matrix of pairwise test results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTests {
    pub clusters: usize,
    /// `(u, v, result)` for every `u < v`.
    pub pairs: Vec<(usize, usize, ChiSquaredResult)>,
}

impl PairwiseTests {
    /// Symmetric p-value matrix with ones on the diagonal.
    pub fn p_values(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![1.0; self.clusters]; self.clusters];
        for &(u, v, r) in &self.pairs {
            m[u][v] = r.p_value;
            m[v][u] = r.p_value;
        }
        m
    }

    pub fn max_p_value(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.2.p_value)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn pair_list(clusters: usize) -> Vec<(usize, usize)> {
    (0..clusters)
        .flat_map(|u| (u + 1..clusters).map(move |v| (u, v)))
        .collect()
}

pub fn pairwise_chi_squared(counts: &[Vec<u64>]) -> Result<PairwiseTests> {
    let pairs = pair_list(counts.len())
        .into_par_iter()
        .map(|(u, v)| chi_squared_two_sample(&counts[u], &counts[v]).map(|r| (u, v, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairwiseTests {
        clusters: counts.len(),
        pairs,
    })
}

/// Two-proportion z-test with pooled variance. `None` when the entry is
/// empty in both samples or carries all mass in both.
pub fn two_proportion_p_value(a: u64, na: u64, b: u64, nb: u64) -> Option<f64> {
    if a + b == 0 {
        return None;
    }
    let (na_f, nb_f) = (na as f64, nb as f64);
    let pooled = (a + b) as f64 / (na_f + nb_f);
    let var = pooled * (1.0 - pooled) * (1.0 / na_f + 1.0 / nb_f);
    if var <= 0.0 {
        return None;
    }
    let z = (a as f64 / na_f - b as f64 / nb_f) / var.sqrt();
    Some(normal_two_sided(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntrywiseSummary {
    pub tests: usize,
    pub rejected: usize,
    pub level: f64,
}

impl EntrywiseSummary {
    pub fn rejection_fraction(&self) -> f64 {
        if self.tests == 0 {
            0.0
        } else {
            self.rejected as f64 / self.tests as f64
        }
    }
}

/// Entry-wise two-proportion tests for every pair of clusters and every
/// entry, counting rejections at `level`.
pub fn entrywise_tests(counts: &[Vec<u64>], level: f64) -> Result<EntrywiseSummary> {
    let dim = counts.first().map_or(0, Vec::len);
    let mut totals = Vec::with_capacity(counts.len());
    for c in counts {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
        let n: u64 = c.iter().sum();
        if n == 0 {
            return Err(Error::DegenerateCounts(
                "a sample has no observations".into(),
            ));
        }
        totals.push(n);
    }
    let (tests, rejected) = pair_list(counts.len())
        .into_par_iter()
        .map(|(u, v)| {
            let mut tests = 0;
            let mut rejected = 0;
            for (&a, &b) in counts[u].iter().zip(&counts[v]) {
                if let Some(p) = two_proportion_p_value(a, totals[u], b, totals[v]) {
                    tests += 1;
                    if p < level {
                        rejected += 1;
                    }
                }
            }
            (tests, rejected)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok(EntrywiseSummary {
        tests,
        rejected,
        level,
    })
}
