//! Numerical toolkit for fast-reaction systems on the periodic torus.
//!
//! Fields are truncated Fourier series, linear operators are diagonal
//! multipliers, and the fast variable relaxes onto the zero set of the
//! reaction term. The crate integrates the full system and its singular
//! limit, constructs the slow manifold by a backward-time fixed point, and
//! exposes the diagnostics needed to check convergence rates.

// NaN must fail range checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critical;
pub mod error;
pub mod integrator;
pub mod lyapunov_perron;
pub mod spectral;
pub mod splitting;
pub mod system;

pub use critical::{h0_closed_form, solve_h0, CriticalGraph, CriticalSolver};
pub use error::{Error, Result};
pub use integrator::{FastSlowState, IntegrationFailure, RunPlan, Trajectory};
pub use lyapunov_perron::{LpConfig, SlowManifoldPoint, SlowManifoldSolver, WeightedTrajectory};
pub use spectral::{MultiplierOperator, SpectralField};
pub use splitting::{SplittingDiagnostics, SplittingSpec};
pub use system::{ModifiedSystem, Nonlinearity, SystemSpec};
