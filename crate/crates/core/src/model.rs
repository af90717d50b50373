//! Domain types shared by the estimators and the experiment harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the simplex sum constraint.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Tolerance on `n * value` being an integer for hashed frequencies.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-12;

/// A point on the probability simplex of dimension at least two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates `probs` without renormalizing it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::DimensionTooSmall { dim: probs.len() });
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry { index });
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
            if value > 1.0 {
                return Err(Error::EntryAboveOne { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > SIMPLEX_TOLERANCE {
            return Err(Error::SumNotOne { sum, deviation });
        }
        Ok(Self { probs })
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Validates a raw vector as a simplex point.
pub fn validate_distribution(raw: &[f64]) -> Result<Distribution> {
    Distribution::new(raw.to_vec())
}

/// Number of entries where `a` and `b` differ by more than `tol`.
pub fn sparsity_distance(a: &Distribution, b: &Distribution, tol: f64) -> Result<usize> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.probs
        .iter()
        .zip(&b.probs)
        .filter(|(x, y)| (*x - *y).abs() > tol)
        .count())
}

/// A real vector with finite entries and no simplex constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateVector {
    values: Vec<f64>,
}

impl EstimateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Rescales to unit sum. All-zero vectors are returned unchanged.
    pub fn renormalized(&self) -> Self {
        let sum: f64 = self.values.iter().sum();
        if sum <= 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| v / sum).collect(),
        }
    }
}

impl From<&Distribution> for EstimateVector {
    fn from(p: &Distribution) -> Self {
        Self {
            values: p.probs.clone(),
        }
    }
}

/// Decoded per-cluster hashed frequencies `N_k / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedEstimate {
    values: EstimateVector,
    sample_size: u64,
    bits: u32,
    cluster_id: u64,
    seed: u64,
}

impl HashedEstimate {
    /// Builds the estimate from integer match counts.
    pub fn from_counts(
        counts: &[u64],
        sample_size: u64,
        bits: u32,
        cluster_id: u64,
        seed: u64,
    ) -> Result<Self> {
        if sample_size == 0 {
            return Err(Error::ZeroSampleSize);
        }
        let n = sample_size as f64;
        let values = counts
            .iter()
            .enumerate()
            .map(|(index, &c)| {
                if c > sample_size {
                    Err(Error::EntryAboveOne {
                        index,
                        value: c as f64 / n,
                    })
                } else {
                    Ok(c as f64 / n)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values: EstimateVector { values },
            sample_size,
            bits,
            cluster_id,
            seed,
        })
    }

    /// Validates already-normalized frequencies, checking `[0, 1]` range and
    /// that every entry is a multiple of `1 / sample_size`.
    pub fn new(
        values: Vec<f64>,
        sample_size: u64,
        bits: u32,
        cluster_id: u64,
        seed: u64,
    ) -> Result<Self> {
        if sample_size == 0 {
            return Err(Error::ZeroSampleSize);
        }
        let values = EstimateVector::new(values)?;
        let n = sample_size as f64;
        for (index, &value) in values.values().iter().enumerate() {
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
            if value > 1.0 {
                return Err(Error::EntryAboveOne { index, value });
            }
            let scaled = value * n;
            if (scaled - scaled.round()).abs() > INTEGRALITY_TOLERANCE * n.max(1.0) {
                return Err(Error::NonIntegralFrequency {
                    index,
                    sample_size,
                    value,
                });
            }
        }
        Ok(Self {
            values,
            sample_size,
            bits,
            cluster_id,
            seed,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.values.values()
    }

    pub fn as_estimate(&self) -> &EstimateVector {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn cluster_id(&self) -> u64 {
        self.cluster_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Integer match counts `N_k` recovered from the frequencies.
    pub fn counts(&self) -> Vec<u64> {
        let n = self.sample_size as f64;
        self.values()
            .iter()
            .map(|v| (v * n).round() as u64)
            .collect()
    }
}

/// Stage-I robust center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CenterMethod {
    Median,
    TrimmedMean(f64),
}

impl CenterMethod {
    /// Number of values trimmed from each end for `clusters` inputs.
    pub fn trim_count(&self, clusters: usize) -> usize {
        match *self {
            CenterMethod::Median => 0,
            CenterMethod::TrimmedMean(omega) => (omega * clusters as f64).floor() as usize,
        }
    }

    pub fn validate(&self, clusters: usize) -> Result<()> {
        if let CenterMethod::TrimmedMean(omega) = *self {
            if !(0.0..0.5).contains(&omega) {
                return Err(Error::InvalidTrimFraction { omega });
            }
            let trim = self.trim_count(clusters);
            if clusters < 2 * trim + 1 {
                return Err(Error::TrimTooLarge { clusters, trim });
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the two-stage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub bits: u32,
    pub alpha: f64,
    pub center: CenterMethod,
    pub master_seed: u64,
    pub renormalize_output: bool,
}

impl ShiftConfig {
    /// The default configuration: `alpha = ln(n)` with a 10% trimmed mean.
    pub fn with_defaults(bits: u32, sample_size: u64, master_seed: u64) -> Self {
        Self {
            bits,
            alpha: default_alpha(sample_size),
            center: CenterMethod::TrimmedMean(0.1),
            master_seed,
            renormalize_output: false,
        }
    }

    pub fn validate(&self, clusters: usize) -> Result<()> {
        if !(1..=crate::codec::MAX_BITS).contains(&self.bits) {
            return Err(Error::BitsOutOfRange { bits: self.bits });
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::NonPositiveAlpha { alpha: self.alpha });
        }
        if clusters == 0 {
            return Err(Error::EmptyInput);
        }
        self.center.validate(clusters)
    }
}

/// `ln(n)`, the default fine-tuning threshold parameter.
pub fn default_alpha(sample_size: u64) -> f64 {
    (sample_size as f64).ln()
}

/// Size parameters of a sparsely heterogeneous instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    pub sparsity: usize,
    pub clusters: usize,
    pub samples: u64,
}

impl HeterogeneitySpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.sparsity > dim {
            return Err(Error::SBudgetExceedsDim {
                s: self.sparsity,
                dim,
            });
        }
        if self.clusters == 0 {
            return Err(Error::EmptyInput);
        }
        if self.samples == 0 {
            return Err(Error::ZeroSampleSize);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_uniform_points() {
        let p = validate_distribution(&[0.5, 0.5]).unwrap();
        assert_eq!(p.dim(), 2);
        let p = Distribution::new(vec![1.0 / 300.0; 300]).unwrap();
        assert_eq!(p.dim(), 300);
    }

    #[test]
    fn rejects_bad_sum_and_reports_deviation() {
        match validate_distribution(&[0.5, 0.6]) {
            Err(Error::SumNotOne { deviation, .. }) => assert!((deviation - 0.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_and_small() {
        assert!(matches!(
            validate_distribution(&[0.5, -0.5, 1.0]),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert!(matches!(
            validate_distribution(&[1.0]),
            Err(Error::DimensionTooSmall { dim: 1 })
        ));
        assert!(matches!(
            validate_distribution(&[]),
            Err(Error::DimensionTooSmall { dim: 0 })
        ));
        assert!(matches!(
            validate_distribution(&[f64::NAN, 1.0]),
            Err(Error::NonFiniteEntry { index: 0 })
        ));
    }

    #[test]
    fn sparsity_distance_counts_changed_entries() {
        let a = Distribution::new(vec![0.25; 4]).unwrap();
        let b = Distribution::new(vec![0.25, 0.26, 0.24, 0.25]).unwrap();
        assert_eq!(sparsity_distance(&a, &a, 0.0).unwrap(), 0);
        assert_eq!(sparsity_distance(&a, &b, 1e-12).unwrap(), 2);
        let c = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            sparsity_distance(&a, &c, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hashed_estimate_integrality() {
        let h = HashedEstimate::new(vec![0.3, 0.7], 10, 2, 0, 0).unwrap();
        assert_eq!(h.counts(), vec![3, 7]);
        assert!(matches!(
            HashedEstimate::new(vec![0.35, 0.7], 10, 2, 0, 0),
            Err(Error::NonIntegralFrequency { index: 0, .. })
        ));
        assert!(matches!(
            HashedEstimate::from_counts(&[1, 2], 0, 2, 0, 0),
            Err(Error::ZeroSampleSize)
        ));
    }

    #[test]
    fn trim_feasibility() {
        assert!(CenterMethod::TrimmedMean(0.1).validate(1).is_ok());
        assert!(CenterMethod::TrimmedMean(0.49).validate(3).is_ok());
        assert!(matches!(
            CenterMethod::TrimmedMean(0.5).validate(10),
            Err(Error::InvalidTrimFraction { .. })
        ));
        assert_eq!(CenterMethod::TrimmedMean(0.25).trim_count(4), 1);
    }

    fn simplex(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, dim).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn normalized_vectors_are_accepted(p in (2usize..64).prop_flat_map(simplex)) {
            prop_assert!(Distribution::new(p).is_ok());
        }

        #[test]
        fn off_simplex_vectors_are_rejected(
            p in (2usize..64).prop_flat_map(simplex),
            shift in prop_oneof![-0.5f64..-1e-6, 1e-6f64..0.5],
        ) {
            let mut q = p;
            q[0] = (q[0] + shift).clamp(0.0, 1.0);
            let sum: f64 = q.iter().sum();
            prop_assume!((sum - 1.0).abs() > SIMPLEX_TOLERANCE);
            prop_assert!(Distribution::new(q).is_err());
        }

        #[test]
        fn sparsity_distance_is_symmetric_and_subadditive(
            (a, b, c) in (2usize..32).prop_flat_map(|d| (simplex(d), simplex(d), simplex(d))),
            mask in prop::collection::vec(any::<bool>(), 32),
        ) {
            // Share some coordinates so distances are not always maximal.
            let mut b = b;
            for (k, &keep) in mask.iter().enumerate().take(a.len()) {
                if keep { b[k] = a[k]; }
            }
            let (a, b, c) = (
                EstimateVectorProbe(a).dist(),
                EstimateVectorProbe(b).dist(),
                EstimateVectorProbe(c).dist(),
            );
            let ab = sparsity_distance(&a, &b, 0.0).unwrap();
            let ba = sparsity_distance(&b, &a, 0.0).unwrap();
            let bc = sparsity_distance(&b, &c, 0.0).unwrap();
            let ac = sparsity_distance(&a, &c, 0.0).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc);
        }
    }

    // Sharing coordinates breaks exact normalization; only the counting
    // behaviour matters for the distance properties.
    struct EstimateVectorProbe(Vec<f64>);

    impl EstimateVectorProbe {
        fn dist(self) -> Distribution {
            Distribution { probs: self.0 }
        }
    }
}
