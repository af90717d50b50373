//! Estimation of many sparsely heterogeneous discrete distributions from
//! b-bit hashed messages.
//!
//! Each cluster's datapoints are hashed to `b` bits ([`codec`]), decoded into
//! biased frequency estimates, pooled into a robust center ([`robust`]), and
//! fine-tuned back per cluster before debiasing ([`estimator`]). The
//! [`synthetic`] and [`ngram`] modules produce ground truth, [`eval`] scores
//! estimates, and [`experiment`] ties everything into reproducible runs.

pub mod codec;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod experiment;
pub mod mix;
pub mod model;
pub mod ngram;
pub mod robust;
pub mod synthetic;

pub use codec::{
    debias, decode_cluster, encode, encode_cluster, hashed_mean, EncodedMessage, HashKey,
};
pub use error::{Error, Result};
pub use estimator::{
    fine_tune, shift_estimate, transfer_to_new_cluster, FineTuneReport, ShiftOutput,
};
pub use eval::{baseline_global, baseline_local, metrics, MetricSummary};
pub use experiment::{
    alpha_report, run_experiment, sweep, Central, EstimatorKind, Experiment, ExperimentConfig,
    Mode, ResultRow, SweepAxis,
};
pub use model::{
    sparsity_distance, validate_distribution, CenterMethod, Distribution, EstimateVector,
    HashedEstimate, HeterogeneitySpec, ShiftConfig,
};
pub use robust::{entrywise_median, entrywise_trimmed_mean, CentralEstimate};
