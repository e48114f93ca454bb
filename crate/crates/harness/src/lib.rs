//! Rate experiments for fast-reaction systems: convergence to the limit
//! problem, slow-manifold distance, attraction and reduced slow flow.

// NaN must fail range checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod fit;
pub mod report;

pub use config::{ExperimentConfig, Tolerances, V0Kind, V0Recipe};
pub use experiments::{
    run_attraction, run_check, run_convergence, run_distance, run_reduced_flow, CheckRow,
    DistanceSweep, RegimeViolation,
};
pub use fit::{fit_exponential, fit_rate, RateFit};
pub use report::{emit_report, RateReport, SweepPoint};
