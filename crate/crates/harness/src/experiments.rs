//! The four rate experiments and the regime check.

use anyhow::Context;
use frsm_core::integrator::{
    integrate_full, integrate_full_sampled, integrate_limit, integrate_reduced, step_count,
};
use frsm_core::splitting::{contraction_constant, ContractionParams};
use frsm_core::system::{estimate_lipschitz, estimate_lipschitz_with, LipschitzSampling};
use frsm_core::{
    CriticalGraph, Error, LpConfig, ModifiedSystem, RunPlan, SlowManifoldSolver, SpectralField,
    SplittingDiagnostics, SplittingSpec, SystemSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::fit::{fit_exponential, fit_rate};
use crate::report::{RateReport, SweepPoint, FAILED};

/// A point outside the admissible parameter regime under `--strict`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeViolation(pub String);

impl std::fmt::Display for RegimeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "regime violation: {}", self.0)
    }
}

impl std::error::Error for RegimeViolation {}

/// Map `f` over `items` on a pool of `workers` threads, keeping order.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> anyhow::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> anyhow::Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn graph(cfg: &ExperimentConfig) -> CriticalGraph {
    CriticalGraph::newton(cfg.tolerances.newton)
}

fn lp_config(cfg: &ExperimentConfig) -> LpConfig {
    LpConfig {
        tol: cfg.tolerances.fixed_point,
        graph: graph(cfg),
        ..LpConfig::default()
    }
}

/// Splitting, contraction constant and regime flags for one `(ε, ζ)` pair.
pub fn regime_diagnostics(
    spec: &SystemSpec,
    modified: &ModifiedSystem,
    split: &SplittingSpec,
    radius: f64,
    samples: usize,
    seed: u64,
) -> anyhow::Result<SplittingDiagnostics> {
    let sampling = LipschitzSampling {
        out_index: 2.0 * spec.gamma,
        ..LipschitzSampling::new(spec.k_max, radius, samples, seed)
    };
    let l_ftilde = estimate_lipschitz_with(&sampling, |u, v| modified.f_tilde(u, v))?;
    let l_g = if spec.g.rule.terms.is_empty() {
        0.0
    } else {
        estimate_lipschitz(&spec.g, spec.k_max, radius, samples, seed, spec.delta)?
    };
    let c = &spec.constants;
    let params = ContractionParams {
        l_ftilde,
        c_a: c.c_a,
        l_g,
        c_b: c.c_b,
        m_b: c.m_b,
        gamma: spec.gamma,
        delta: spec.delta,
        epsilon: spec.epsilon,
        zeta: split.zeta,
        omega_a: c.omega_a,
        lambda0: modified.lambda0,
        n_f: split.n_f,
        n_s: split.n_s,
    };
    Ok(SplittingDiagnostics::new(
        split,
        contraction_constant(&params).ok(),
    ))
}

struct Setup {
    spec: SystemSpec,
    modified: ModifiedSystem,
    split: SplittingSpec,
    regime: SplittingDiagnostics,
}

fn setup(cfg: &ExperimentConfig, epsilon: f64, zeta: f64) -> anyhow::Result<Setup> {
    let spec = cfg.spec(epsilon)?;
    let modified = spec.modified_at_origin()?;
    let split = SplittingSpec::new(zeta, epsilon, spec.constants.omega_a, modified.lambda0)?;
    let regime = regime_diagnostics(
        &spec,
        &modified,
        &split,
        cfg.lipschitz_radius(&spec),
        cfg.lipschitz_samples,
        cfg.seed,
    )?;
    if cfg.strict && !regime.regime_flags.all_pass() {
        return Err(RegimeViolation(format!(
            "ε = {epsilon:e}, ζ = {zeta:e}: {:?}",
            regime.regime_flags
        ))
        .into());
    }
    Ok(Setup {
        spec,
        modified,
        split,
        regime,
    })
}

fn is_regime(e: &anyhow::Error) -> bool {
    e.downcast_ref::<RegimeViolation>().is_some()
}

fn failed_point(parameter: f64, e: &anyhow::Error) -> SweepPoint {
    let mut p = SweepPoint::new(parameter, f64::NAN);
    p.flags.push(format!("{FAILED}: {e:#}"));
    p
}

fn fit_into(report: &mut RateReport, pts: &[(f64, f64)], exponential: bool) {
    let fit = if exponential {
        fit_exponential(pts)
    } else {
        fit_rate(pts)
    };
    match fit {
        Ok(fit) => {
            if fit.dropped > 0 {
                report.flag(format!("dropped_points: {}", fit.dropped));
            }
            report.fit = Some(fit);
        }
        Err(e) => report.flag(format!("fit_skipped: {e}")),
    }
}

fn finish_failures(report: &mut RateReport) {
    if report.any_failed() {
        report.flag("numerical_failures");
    }
    if report.points.iter().any(|p| !p.regime_ok()) {
        report.flag("out_of_regime_points");
    }
}

/// Convergence of the full system to the limit problem as `ε → 0`.
pub fn run_convergence(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<RateReport> {
    cfg.validate()?;
    let points = par_map(workers, &cfg.epsilon, |&eps| {
        match convergence_point(cfg, eps) {
            Ok(p) => Ok(p),
            Err(e) if is_regime(&e) => Err(e),
            Err(e) => Ok(failed_point(eps, &e)),
        }
    })?;
    let mut report = RateReport::new("convergence", "epsilon", cfg);
    report.points = points;
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .map(|p| (p.parameter, p.error))
        .collect();
    fit_into(&mut report, &pts, false);
    if report
        .points
        .iter()
        .any(|p| p.flags.iter().any(|f| f == "initial_layer"))
    {
        report.flag("initial_layer");
    }
    finish_failures(&mut report);
    Ok(report)
}

fn convergence_point(cfg: &ExperimentConfig, eps: f64) -> anyhow::Result<SweepPoint> {
    let spec = cfg.spec(eps)?;
    let modified = spec.modified_at_origin()?;
    let regime = match SplittingSpec::new(
        cfg.first_zeta()?,
        eps,
        spec.constants.omega_a,
        modified.lambda0,
    ) {
        Ok(split) => {
            let r = regime_diagnostics(
                &spec,
                &modified,
                &split,
                cfg.lipschitz_radius(&spec),
                cfg.lipschitz_samples,
                cfg.seed,
            )?;
            if cfg.strict && !r.regime_flags.all_pass() {
                return Err(RegimeViolation(format!("ε = {eps:e}: {:?}", r.regime_flags)).into());
            }
            Some(r)
        }
        Err(_) => None,
    };
    let graph = graph(cfg);
    let v0 = cfg.initial_v();
    let h0 = graph.solve(&spec, &v0)?;
    let u0 = if cfg.on_manifold {
        h0.clone()
    } else {
        h0.axpy(
            1.0,
            &SpectralField::cosine(cfg.k_max, cfg.offset_mode, cfg.offset),
        )
    };
    let dt = cfg.step_for(eps);
    let full = integrate_full(&spec, &u0, &v0, cfg.t_eval, dt)?;
    let limit = integrate_limit(&spec, &graph, &v0, cfg.t_eval, dt)?;
    let (a, b) = (full.last(), limit.last());
    let u_err = a.u.axpy(-1.0, &b.u).h2_norm();
    let v_err = a.v.axpy(-1.0, &b.v).h2_norm();
    let error = u_err + v_err;
    let layer = (-cfg.t_eval * modified.fast_rate(spec.constants.omega_a).abs()).exp()
        * u0.axpy(-1.0, &h0).h2_norm();
    let mut p = SweepPoint::new(eps, error)
        .with("u_error", u_err)
        .with("v_error", v_err)
        .with("layer_term", layer)
        .with("dt", full.step_dt);
    if layer > 0.5 * error {
        p.flags.push("initial_layer".into());
    }
    if full.cutoff_activated {
        p.flags.push("cutoff_active".into());
    }
    p.regime = regime;
    Ok(p)
}

/// Which parameter a distance sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSweep {
    /// All `ε`, first `ζ`.
    Epsilon,
    /// Last (smallest) `ε`, all `ζ`.
    Zeta,
}

/// Distance between the slow manifold and the critical manifold at the slow
/// part of the configured `v₀`.
pub fn run_distance(
    cfg: &ExperimentConfig,
    sweep: DistanceSweep,
    workers: usize,
) -> anyhow::Result<RateReport> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64, f64)> = match sweep {
        DistanceSweep::Epsilon if cfg.epsilon.is_empty() => Vec::new(),
        DistanceSweep::Epsilon => {
            let z = cfg.first_zeta()?;
            cfg.epsilon.iter().map(|&e| (e, z, e)).collect()
        }
        DistanceSweep::Zeta if cfg.zeta.is_empty() => Vec::new(),
        DistanceSweep::Zeta => {
            let e = *cfg.epsilon.last().context("empty epsilon list")?;
            cfg.zeta.iter().map(|&z| (e, z, z)).collect()
        }
    };
    let points = par_map(workers, &pairs, |&(eps, zeta, param)| match distance_point(
        cfg, eps, zeta, param,
    ) {
        Ok(p) => Ok(p),
        Err(e) if is_regime(&e) => Err(e),
        Err(e) => Ok(failed_point(param, &e)),
    })?;
    let name = match sweep {
        DistanceSweep::Epsilon => "epsilon",
        DistanceSweep::Zeta => "zeta",
    };
    let mut report = RateReport::new("distance", name, cfg);
    report.points = points;
    let ok: Vec<&SweepPoint> = report.points.iter().filter(|p| !p.failed()).collect();
    if !ok.is_empty() && ok.iter().all(|p| p.error <= cfg.tolerances.fixed_point) {
        report.flag("exact");
    } else {
        let pts: Vec<(f64, f64)> = ok.iter().map(|p| (p.parameter, p.error)).collect();
        fit_into(&mut report, &pts, false);
    }
    finish_failures(&mut report);
    Ok(report)
}

fn distance_point(
    cfg: &ExperimentConfig,
    eps: f64,
    zeta: f64,
    param: f64,
) -> anyhow::Result<SweepPoint> {
    let s = setup(cfg, eps, zeta)?;
    let mut p = match distance_value(cfg, &s, eps, zeta, param) {
        Ok(p) => p,
        Err(e) => {
            let mut p = failed_point(param, &e);
            if matches!(e.downcast_ref::<Error>(), Some(Error::Divergence { .. })) {
                p.flags.push("contraction_failure".into());
            }
            p
        }
    };
    p.regime = Some(s.regime);
    Ok(p)
}

fn distance_value(
    cfg: &ExperimentConfig,
    s: &Setup,
    eps: f64,
    zeta: f64,
    param: f64,
) -> anyhow::Result<SweepPoint> {
    let solver = SlowManifoldSolver::new(&s.spec, &s.modified, &s.split, lp_config(cfg))?;
    let v0 = s.split.project_slow(&cfg.initial_v());
    let point = solver.solve(&v0)?;
    let (du, dv) = solver.manifold_distance(&point)?;
    Ok(SweepPoint::new(param, du + dv)
        .with("epsilon", eps)
        .with("zeta", zeta)
        .with("dist_u", du)
        .with("dist_vF", dv)
        .with("iterations", point.iterations as f64)
        .with("residual", point.residual)
        .with("truncation_bound", point.truncation_bound))
}

/// Decay of the distance to the slow manifold for off-manifold data.
pub fn run_attraction(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<RateReport> {
    cfg.validate()?;
    let eps = cfg.first_epsilon()?;
    let s = setup(cfg, eps, cfg.first_zeta()?)?;
    let solver = SlowManifoldSolver::new(&s.spec, &s.modified, &s.split, lp_config(cfg))?;
    let v0 = s.split.project_slow(&cfg.initial_v());
    let base = solver.solve(&v0)?;
    let u0 = base.u_at_0.axpy(
        1.0,
        &SpectralField::cosine(cfg.k_max, cfg.offset_mode, cfg.offset),
    );
    let v_init = v0.axpy(1.0, &base.v_fast_at_0);
    let dt = cfg.step_for(eps);
    let (steps, _) = step_count(cfg.horizon, dt)?;
    let every = (steps / cfg.samples.max(1)).max(1);
    let traj = integrate_full_sampled(
        &s.spec,
        &u0,
        &v_init,
        RunPlan::new(cfg.horizon, dt).recording(every),
    )?;
    let offsets = par_map(workers, &traj.states, |st| Ok(solver.offset(&st.u, &st.v)?))?;

    let mut report = RateReport::new("attraction", "t", cfg);
    let tol = cfg.tolerances.fixed_point;
    for (st, &z) in traj.states.iter().zip(&offsets) {
        let mut p = SweepPoint::new(st.t, z);
        if z <= 100.0 * tol {
            p.flags.push("below_floor".into());
        }
        p.regime = Some(s.regime.clone());
        report.points.push(p);
    }
    let reference = s.modified.fast_rate(s.spec.constants.omega_a).abs()
        + s.spec
            .op_a
            .symbol((cfg.offset_mode * cfg.offset_mode) as f64)
            .abs();
    report.summary.insert("reference_rate".into(), reference);
    if offsets.first().is_none_or(|&z| z <= 100.0 * tol) {
        report.flag("offset_too_small");
    } else {
        // window: the leading run of samples above the floor
        let window: Vec<(f64, f64)> = traj
            .states
            .iter()
            .zip(&offsets)
            .take_while(|(_, &z)| z > 100.0 * tol)
            .map(|(st, &z)| (st.t, z))
            .collect();
        let (zmax, zmin) = window
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), &(_, z)| {
                (a.max(z), b.min(z))
            });
        report.summary.insert("decay_factor".into(), zmax / zmin);
        report
            .summary
            .insert("window_points".into(), window.len() as f64);
        fit_into(&mut report, &window, true);
        if let Some(fit) = report.fit {
            report.summary.insert("rate".into(), -fit.slope);
            report
                .summary
                .insert("constant".into(), fit.intercept.exp());
        }
    }
    if traj.cutoff_activated {
        report.flag("cutoff_active");
    }
    finish_failures(&mut report);
    Ok(report)
}

/// Error of the reduced slow flow against the full limit flow across `ζ`.
pub fn run_reduced_flow(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<RateReport> {
    cfg.validate()?;
    let points = par_map(workers, &cfg.zeta, |&zeta| match reduced_point(cfg, zeta) {
        Ok(p) => Ok(p),
        Err(e) if is_regime(&e) => Err(e),
        Err(e) => Ok(failed_point(zeta, &e)),
    })?;
    let mut report = RateReport::new("reduced_flow", "zeta", cfg);
    report.fit_parameter = "gap".into();
    report.points = points;
    let ok: Vec<&SweepPoint> = report.points.iter().filter(|p| !p.failed()).collect();
    let mut by_gap: Vec<(f64, f64)> = ok
        .iter()
        .filter_map(|p| Some((p.regime.as_ref()?.gap, p.error)))
        .collect();
    fit_into(&mut report, &by_gap, false);
    by_gap.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = by_gap
        .windows(2)
        .all(|w| w[0].0 == w[1].0 || w[1].1 < w[0].1);
    report
        .summary
        .insert("monotone_in_gap".into(), if monotone { 1.0 } else { 0.0 });
    if !monotone {
        report.flag("not_monotone_in_gap");
    }
    finish_failures(&mut report);
    Ok(report)
}

fn reduced_point(cfg: &ExperimentConfig, zeta: f64) -> anyhow::Result<SweepPoint> {
    let eps = cfg.first_epsilon()?;
    let s = setup(cfg, eps, zeta)?;
    let graph = graph(cfg);
    let slow = s.split.project_slow(&cfg.initial_v());
    let tail_mode = s.split.k0 + 1;
    let tail = if tail_mode <= cfg.k_max {
        SpectralField::cosine(cfg.k_max, tail_mode, cfg.fast_tail)
    } else {
        slow.zeros_like()
    };
    let v0 = slow.axpy(1.0, &tail);
    let dt = cfg.step_for(eps);
    let plan = RunPlan::new(cfg.t_eval, dt);
    let limit = integrate_limit(&s.spec, &graph, &v0, cfg.t_eval, dt)?;
    let (reduced, discarded) = integrate_reduced(&s.spec, &graph, &s.split, &v0, plan)?;
    let v_lim = &limit.last().v;
    let v_red = &reduced.last().v;
    let error = v_lim.axpy(-1.0, v_red).h2_norm();
    let heat = s
        .split
        .fast_semigroup(&s.spec.op_b, cfg.t_eval, &s.split.project_fast(&v0))?
        .h2_norm();

    // full system from the critical manifold over the slow data
    let u_start = graph.solve(&s.spec, &slow)?;
    let full = integrate_full(&s.spec, &u_start, &slow, cfg.t_eval, dt)?;
    let (slow_red, _) = integrate_reduced(&s.spec, &graph, &s.split, &slow, plan)?;
    let end = full.last();
    let red_end = slow_red.last();
    let combined = end
        .u
        .axpy(-1.0, &graph.solve(&s.spec, &red_end.v)?)
        .h2_norm()
        + end.v.axpy(-1.0, &red_end.v).h2_norm();

    let mut p = SweepPoint::new(zeta, error)
        .with("discarded", discarded)
        .with("discarded_heat", heat)
        .with("combined", combined);
    p.regime = Some(s.regime);
    Ok(p)
}

/// Regime check over every `(ε, ζ)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub epsilon: f64,
    pub lambda0: f64,
    pub small_margin: bool,
    pub j_bound: f64,
    pub diagnostics: Option<SplittingDiagnostics>,
    pub error: Option<String>,
}

impl CheckRow {
    pub fn passes(&self) -> bool {
        self.error.is_none()
            && self
                .diagnostics
                .as_ref()
                .is_some_and(|d| d.regime_flags.all_pass())
    }
}

pub fn run_check(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<Vec<CheckRow>> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = cfg
        .epsilon
        .iter()
        .flat_map(|&e| cfg.zeta.iter().map(move |&z| (e, z)))
        .collect();
    par_map(workers, &pairs, |&(eps, zeta)| {
        let spec = cfg.spec(eps)?;
        let modified = match spec.modified_at_origin() {
            Ok(m) => m,
            Err(e) => {
                return Ok(CheckRow {
                    epsilon: eps,
                    lambda0: f64::NAN,
                    small_margin: false,
                    j_bound: f64::NAN,
                    diagnostics: None,
                    error: Some(e.to_string()),
                })
            }
        };
        let mut row = CheckRow {
            epsilon: eps,
            lambda0: modified.lambda0,
            small_margin: modified.small_margin,
            j_bound: modified.j_bound,
            diagnostics: None,
            error: None,
        };
        match SplittingSpec::new(zeta, eps, spec.constants.omega_a, modified.lambda0) {
            Ok(split) => {
                row.diagnostics = Some(regime_diagnostics(
                    &spec,
                    &modified,
                    &split,
                    cfg.lipschitz_radius(&spec),
                    cfg.lipschitz_samples,
                    cfg.seed,
                )?)
            }
            Err(e) => row.error = Some(format!("ζ = {zeta:e}: {e}")),
        }
        Ok(row)
    })
}
