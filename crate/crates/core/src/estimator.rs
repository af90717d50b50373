//! Two-stage estimation: robust center, per-cluster fine-tuning, debiasing.
//!
//! Both stages consume the same hashed estimates; there is no sample
//! splitting. An entry adopts the central value iff
//! `|b̌⋆_k - b̌^t_k| <= sqrt(alpha * b̌^t_k / n)`, with the local estimate under
//! the square root.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::debias;
use crate::error::{Error, Result};
use crate::model::{EstimateVector, HashedEstimate, ShiftConfig};
use crate::robust::{robust_center, CentralEstimate};

/// Which entries of one cluster adopted the central value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    /// `kept_central[k]` is true iff `k` is in `K^t_alpha`.
    pub kept_central: Vec<bool>,
    /// `d - |K^t_alpha|`: entries that kept their local value.
    pub replaced_count: usize,
    pub alpha_used: f64,
    pub threshold_values: Option<Vec<f64>>,
}

impl FineTuneReport {
    pub fn kept_count(&self) -> usize {
        self.kept_central.len() - self.replaced_count
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kept_central
            .iter()
            .enumerate()
            .filter_map(|(k, &kept)| kept.then_some(k))
    }
}

/// `sqrt(alpha * local / n)`, taking `0 * inf` as 0 so that a zero local
/// frequency only ever matches the center exactly.
#[inline]
pub fn fine_tune_threshold(alpha: f64, local: f64, sample_size: u64) -> f64 {
    if local == 0.0 {
        0.0
    } else {
        (alpha * local / sample_size as f64).sqrt()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha <= 0.0 {
        Err(Error::NonPositiveAlpha { alpha })
    } else {
        Ok(())
    }
}

fn fine_tune_values(
    central: &[f64],
    local: &[f64],
    sample_size: u64,
    alpha: f64,
    keep_thresholds: bool,
) -> (Vec<f64>, FineTuneReport) {
    let mut kept_central = Vec::with_capacity(local.len());
    let mut thresholds = keep_thresholds.then(|| Vec::with_capacity(local.len()));
    let values = central
        .iter()
        .zip(local)
        .map(|(&c, &l)| {
            let threshold = fine_tune_threshold(alpha, l, sample_size);
            if let Some(t) = thresholds.as_mut() {
                t.push(threshold);
            }
            let keep = (c - l).abs() <= threshold;
            kept_central.push(keep);
            if keep {
                c
            } else {
                l
            }
        })
        .collect();
    let replaced_count = kept_central.iter().filter(|&&k| !k).count();
    (
        values,
        FineTuneReport {
            kept_central,
            replaced_count,
            alpha_used: alpha,
            threshold_values: thresholds,
        },
    )
}

/// Stage II for one cluster. Returns the fine-tuned hashed vector `b̂^t`
/// (not yet debiased) and the partition report.
pub fn fine_tune(
    central: &CentralEstimate,
    local: &HashedEstimate,
    alpha: f64,
) -> Result<(EstimateVector, FineTuneReport)> {
    check_alpha(alpha)?;
    if central.dim() != local.dim() {
        return Err(Error::DimensionMismatch {
            expected: central.dim(),
            found: local.dim(),
        });
    }
    let (values, report) = fine_tune_values(
        central.values(),
        local.values(),
        local.sample_size(),
        alpha,
        true,
    );
    Ok((EstimateVector::new(values)?, report))
}

/// Per-cluster outputs of [`shift_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutput {
    pub center: CentralEstimate,
    /// Debiased final estimates `p̂^t`.
    pub estimates: Vec<EstimateVector>,
    pub reports: Vec<FineTuneReport>,
}

impl ShiftOutput {
    /// Mean number of fine-tuned (locally kept) entries per cluster.
    pub fn mean_replaced(&self) -> f64 {
        let total: usize = self.reports.iter().map(|r| r.replaced_count).sum();
        total as f64 / self.reports.len() as f64
    }
}

/// Runs both stages on `T` cluster estimates.
pub fn shift_estimate(estimates: &[HashedEstimate], config: &ShiftConfig) -> Result<ShiftOutput> {
    config.validate(estimates.len())?;
    if let Some(bad) = estimates.iter().find(|e| e.bits() != config.bits) {
        return Err(Error::Config(format!(
            "cluster {} was encoded with {} bits, config says {}",
            bad.cluster_id(),
            bad.bits(),
            config.bits
        )));
    }
    let center = robust_center(estimates, config.center)?;
    let (estimates, reports): (Vec<_>, Vec<_>) = estimates
        .par_iter()
        .map(|local| {
            let (tuned, report) = fine_tune(&center, local, config.alpha)?;
            let mut p = debias(&tuned, config.bits);
            if config.renormalize_output {
                p = p.renormalized();
            }
            Ok((p, report))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(ShiftOutput {
        center,
        estimates,
        reports,
    })
}

/// Fine-tunes an existing center against a new cluster with its own sample
/// size and returns the debiased estimate.
pub fn transfer_to_new_cluster(
    central: &CentralEstimate,
    new_local: &HashedEstimate,
    alpha: f64,
) -> Result<EstimateVector> {
    transfer_with_report(central, new_local, alpha).map(|(p, _)| p)
}

pub fn transfer_with_report(
    central: &CentralEstimate,
    new_local: &HashedEstimate,
    alpha: f64,
) -> Result<(EstimateVector, FineTuneReport)> {
    let (tuned, report) = fine_tune(central, new_local, alpha)?;
    Ok((debias(&tuned, new_local.bits()), report))
}
