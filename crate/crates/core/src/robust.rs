//! Entry-wise robust centers over cluster-level hashed estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CenterMethod, EstimateVector, HashedEstimate};

/// The collaboratively estimated hashed center `b̌⋆`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralEstimate {
    pub values: EstimateVector,
    pub method: CenterMethod,
    pub clusters_used: usize,
}

impl CentralEstimate {
    pub fn values(&self) -> &[f64] {
        self.values.values()
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }
}

fn check_inputs(rows: &[&[f64]]) -> Result<usize> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let dim = first.len();
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if let Some(index) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
    }
    Ok(dim)
}

/// Applies `reduce` to the sorted column of every entry.
fn per_entry<F>(rows: &[&[f64]], reduce: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = check_inputs(rows)?;
    let mut column = vec![0.0; rows.len()];
    Ok((0..dim)
        .map(|k| {
            for (slot, row) in column.iter_mut().zip(rows) {
                *slot = row[k];
            }
            column.sort_unstable_by(f64::total_cmp);
            reduce(&column)
        })
        .collect())
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let t = sorted.len();
    if t % 2 == 1 {
        sorted[t / 2]
    } else {
        (sorted[t / 2 - 1] + sorted[t / 2]) / 2.0
    }
}

/// Entry-wise median of raw vectors; even counts average the two middle
/// order statistics.
pub fn median_of(rows: &[&[f64]]) -> Result<Vec<f64>> {
    per_entry(rows, median_sorted)
}

/// Entry-wise mean after dropping `floor(omega * T)` values from each end.
pub fn trimmed_mean_of(rows: &[&[f64]], omega: f64) -> Result<Vec<f64>> {
    let method = CenterMethod::TrimmedMean(omega);
    method.validate(rows.len().max(1))?;
    let trim = method.trim_count(rows.len());
    if rows.len() < 2 * trim + 1 {
        return Err(Error::TrimTooLarge {
            clusters: rows.len(),
            trim,
        });
    }
    per_entry(rows, |sorted| {
        let kept = &sorted[trim..sorted.len() - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

fn rows(estimates: &[HashedEstimate]) -> Vec<&[f64]> {
    estimates.iter().map(HashedEstimate::values).collect()
}

pub fn entrywise_median(estimates: &[HashedEstimate]) -> Result<CentralEstimate> {
    let values = median_of(&rows(estimates))?;
    Ok(CentralEstimate {
        values: EstimateVector::new(values)?,
        method: CenterMethod::Median,
        clusters_used: estimates.len(),
    })
}

pub fn entrywise_trimmed_mean(estimates: &[HashedEstimate], omega: f64) -> Result<CentralEstimate> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values = trimmed_mean_of(&rows(estimates), omega)?;
    Ok(CentralEstimate {
        values: EstimateVector::new(values)?,
        method: CenterMethod::TrimmedMean(omega),
        clusters_used: estimates.len(),
    })
}

/// Dispatches on the configured center.
pub fn robust_center(
    estimates: &[HashedEstimate],
    method: CenterMethod,
) -> Result<CentralEstimate> {
    match method {
        CenterMethod::Median => entrywise_median(estimates),
        CenterMethod::TrimmedMean(omega) => entrywise_trimmed_mean(estimates, omega),
    }
}
