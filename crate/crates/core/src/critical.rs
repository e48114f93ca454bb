//! The critical set `{f(u, v) = 0}` as a graph `u = h⁰(v)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralField;
use crate::system::{estimate_lipschitz_with, LipschitzSampling, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalSolver {
    Newton,
    ClosedForm,
}

/// Solver settings for `h⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalGraph {
    pub solver: CriticalSolver,
    /// Initial Newton guess; zero when absent.
    pub branch_hint: Option<SpectralField>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for CriticalGraph {
    fn default() -> Self {
        Self {
            solver: CriticalSolver::Newton,
            branch_hint: None,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

impl CriticalGraph {
    pub fn newton(tol: f64) -> Self {
        Self {
            newton_tol: tol,
            ..Self::default()
        }
    }

    pub fn closed_form() -> Self {
        Self {
            solver: CriticalSolver::ClosedForm,
            ..Self::default()
        }
    }

    /// `h⁰(v)` on the attracting branch, dealiased.
    pub fn solve(&self, spec: &SystemSpec, v: &SpectralField) -> Result<SpectralField> {
        match self.solver {
            CriticalSolver::Newton => solve_h0(self, spec, v),
            CriticalSolver::ClosedForm => {
                if spec.name != "benchmark" {
                    return Err(Error::Config(format!(
                        "no closed-form critical graph for system '{}'",
                        spec.name
                    )));
                }
                h0_closed_form(v)
            }
        }
    }
}

/// Pointwise Newton iteration on the scalar rule `f(·, v(x_j)) = 0`.
///
/// The limit must satisfy `∂f/∂u < 0` at every grid point; otherwise the
/// iteration has landed on a repelling branch.
pub fn solve_h0(
    graph: &CriticalGraph,
    spec: &SystemSpec,
    v: &SpectralField,
) -> Result<SpectralField> {
    if v.k_max() != spec.k_max || v.dim() != spec.dim {
        return Err(Error::Config("field grid does not match system".into()));
    }
    let vs = v.to_physical()?;
    let guess = match &graph.branch_hint {
        Some(h) => {
            h.ensure_same_grid(v)?;
            h.to_physical()?
        }
        None => vec![0.0; vs.len()],
    };
    let rule = &spec.f.rule;
    let mut us = Vec::with_capacity(vs.len());
    for (&vj, &u0) in vs.iter().zip(&guess) {
        let mut u = u0;
        let mut converged = false;
        for _ in 0..graph.newton_max_iter {
            let r = rule.eval(u, vj);
            let d = rule.du(u, vj);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::ImplicitFunction(format!(
                    "degenerate derivative at v = {vj:.6e}"
                )));
            }
            let step = r / d;
            u -= step;
            if !u.is_finite() {
                return Err(Error::ImplicitFunction(format!(
                    "Newton iterate diverged at v = {vj:.6e}"
                )));
            }
            if step.abs() <= 1e-15 * (1.0 + u.abs())
                || rule.eval(u, vj).abs() <= 0.01 * graph.newton_tol
            {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ImplicitFunction(format!(
                "Newton did not converge in {} iterations at v = {vj:.6e}",
                graph.newton_max_iter
            )));
        }
        let slope = rule.du(u, vj);
        if slope >= 0.0 {
            return Err(Error::ImplicitFunction(format!(
                "converged to a non-attracting branch (df/du = {slope:.3e}) at v = {vj:.6e}"
            )));
        }
        us.push(u);
    }
    let mut out = SpectralField::from_samples(&us, v.k_max(), v.dim())?;
    out.dealias_in_place();
    Ok(out)
}

/// Attracting branch of the benchmark, `h⁰(v) = −1/2 + √(1/4 + v²)`,
/// evaluated as `v²/(1/2 + √(1/4 + v²))` to avoid cancellation.
pub fn h0_closed_form(v: &SpectralField) -> Result<SpectralField> {
    let vs = v.to_physical()?;
    let us: Vec<f64> = vs
        .iter()
        .map(|&x| x * x / (0.5 + (0.25 + x * x).sqrt()))
        .collect();
    let mut out = SpectralField::from_samples(&us, v.k_max(), v.dim())?;
    out.dealias_in_place();
    Ok(out)
}

/// `‖f(h, v)‖_{H²}`.
pub fn critical_residual(spec: &SystemSpec, h: &SpectralField, v: &SpectralField) -> Result<f64> {
    Ok(spec.eval_f(h, v)?.h2_norm())
}

/// Empirical Lipschitz lower bound of `v ↦ h⁰(v)` in `H²`.
pub fn estimate_lh(
    graph: &CriticalGraph,
    spec: &SystemSpec,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = LipschitzSampling::new(spec.k_max, radius, samples, seed);
    estimate_lipschitz_with(&cfg, |_, v| graph.solve(spec, v))
}
