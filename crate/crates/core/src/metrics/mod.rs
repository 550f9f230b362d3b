//! Classification metrics, significance tests, calibration and drift.

mod calibration;
mod classify;
mod cost;
mod drift;
mod stats;

pub use calibration::{
    brier, calibrate, ece, fit_temperature, fit_temperature_value, nll, CalibrationReport,
    ECE_BINS, TEMPERATURE_RANGE,
};
pub use classify::{
    auc_roc, average_precision, binary_f1, classify_metrics, mean_f1_over, optimal_threshold,
    per_timestep_metrics, Confusion, DecisionRule, MetricBundle, MetricKind, PerStepReport,
};
pub use cost::{cost_sweep, CostPoint, COST_RATIOS};
pub use drift::{l2_mean_drift, median_bandwidth, mmd_rbf, MmdEstimate, MMD_MAX_ROWS};
pub use stats::{
    bootstrap_ci, bootstrap_mean_ci, mean, paired_t, percentile, sample_sd, welch_t, StatReport,
    TestKind, BOOTSTRAP_RESAMPLES,
};
