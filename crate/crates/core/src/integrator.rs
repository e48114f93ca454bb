//! Exponential time differencing for the fast-reaction system.
//!
//! The linear part of each component is applied exactly mode by mode. For
//! `u` the linear part is `A + c/ε` with `c` the mean of `∂f/∂u` at the
//! origin, and the remainder `(f(u, v) − c·u)/ε` is treated by the
//! second-order Cox–Matthews scheme (ETD2RK).

use serde::{Deserialize, Serialize};

use crate::critical::CriticalGraph;
use crate::error::{Error, Result};
use crate::spectral::{MultiplierOperator, SpectralField};
use crate::splitting::SplittingSpec;
use crate::system::SystemSpec;

const TAYLOR_SWITCH: f64 = 1e-4;
const SERIES_SWITCH: f64 = 0.5;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `φ_p(z) = Σ_{j≥0} z^j/(j + p)!` summed to `terms` terms.
fn phi_series(p: u32, z: f64, terms: u32) -> f64 {
    let mut sum = 0.0;
    let mut zj = 1.0;
    for j in 0..terms {
        sum += zj / factorial(j + p);
        zj *= z;
    }
    sum
}

/// `φ₁(z) = (e^z − 1)/z`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < TAYLOR_SWITCH {
        phi_series(1, z, 6)
    } else {
        z.exp_m1() / z
    }
}

/// `φ₂(z) = (e^z − 1 − z)/z²`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < TAYLOR_SWITCH {
        phi_series(2, z, 6)
    } else if z.abs() < SERIES_SWITCH {
        phi_series(2, z, 20)
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// `φ₃(z) = (e^z − 1 − z − z²/2)/z³`.
pub fn phi3(z: f64) -> f64 {
    if z.abs() < TAYLOR_SWITCH {
        phi_series(3, z, 6)
    } else if z.abs() < SERIES_SWITCH {
        phi_series(3, z, 20)
    } else {
        (z.exp_m1() - z - 0.5 * z * z) / (z * z * z)
    }
}

/// State of the coupled system at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastSlowState {
    pub u: SpectralField,
    pub v: SpectralField,
    pub t: f64,
}

impl FastSlowState {
    pub fn new(u: SpectralField, v: SpectralField, t: f64) -> Result<Self> {
        u.ensure_same_grid(&v)?;
        Ok(Self { u, v, t })
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Uniformly stepped, time-ordered sequence of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<FastSlowState>,
    /// Spacing of the recorded states.
    pub dt: f64,
    /// Internal step.
    pub step_dt: f64,
    pub scheme_order: u32,
    /// Set when a state left the cutoff ball.
    pub cutoff_activated: bool,
}

impl Trajectory {
    pub fn last(&self) -> &FastSlowState {
        self.states
            .last()
            .expect("trajectory holds at least the initial state")
    }

    /// One diagnostics row per recorded state.
    pub fn diagnostics(
        &self,
        spec: &SystemSpec,
        graph: &CriticalGraph,
    ) -> Result<Vec<TrajectoryRow>> {
        self.states
            .iter()
            .map(|s| {
                Ok(TrajectoryRow {
                    t: s.t,
                    u_h2: s.u.h2_norm(),
                    v_h2: s.v.h2_norm(),
                    residual: spec.eval_f(&s.u, &s.v)?.h2_norm(),
                    dist_critical: s.u.axpy(-1.0, &graph.solve(spec, &s.v)?).h2_norm(),
                })
            })
            .collect()
    }
}

/// CSV row of a trajectory export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u_h2: f64,
    pub v_h2: f64,
    pub residual: f64,
    pub dist_critical: f64,
}

/// An integration failure together with everything computed before it.
#[derive(Debug)]
pub struct IntegrationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} recorded states)",
            self.error,
            self.partial.states.len()
        )
    }
}

impl std::error::Error for IntegrationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        f.error
    }
}

pub type IntegrationResult = std::result::Result<Trajectory, IntegrationFailure>;

/// Per-mode ETD2RK coefficients for one linear symbol and step.
#[derive(Debug, Clone)]
pub struct ModeCoefficients {
    pub exp: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl ModeCoefficients {
    pub fn new(template: &SpectralField, symbol: impl Fn(f64) -> f64, h: f64) -> Self {
        let n = template.len();
        let mut exp = Vec::with_capacity(n);
        let mut p1 = Vec::with_capacity(n);
        let mut p2 = Vec::with_capacity(n);
        for i in 0..n {
            let z = h * symbol(template.wavenumber_sq(i));
            exp.push(z.exp());
            p1.push(h * phi1(z));
            p2.push(h * phi2(z));
        }
        Self {
            exp,
            phi1: p1,
            phi2: p2,
        }
    }

    /// `e^{hL} w + h φ₁(hL) n`.
    fn predictor(&self, w: &SpectralField, n: &SpectralField) -> SpectralField {
        let mut out = w.clone();
        for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
            *c = *c * self.exp[i] + n.coeffs()[i] * self.phi1[i];
        }
        out
    }

    /// `a + h φ₂(hL) (n_a − n_w)`.
    fn corrector(
        &self,
        a: &SpectralField,
        n_a: &SpectralField,
        n_w: &SpectralField,
    ) -> SpectralField {
        let mut out = a.clone();
        for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
            *c += (n_a.coeffs()[i] - n_w.coeffs()[i]) * self.phi2[i];
        }
        out
    }
}

/// Time stepper for the full system with a fixed step.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    spec: &'a SystemSpec,
    shift: f64,
    dt: f64,
    u_coef: ModeCoefficients,
    v_coef: ModeCoefficients,
}

/// Diagonal part `c` of the `u` nonlinearity: the mean of `∂f/∂u` at the
/// origin when that is negative, otherwise 0.
pub fn linear_shift(spec: &SystemSpec) -> Result<f64> {
    let zero = spec.zero_field();
    let d = spec.dxf_samples(&zero, &zero)?;
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok(mean.min(0.0))
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a SystemSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let shift = linear_shift(spec)?;
        let zero = spec.zero_field();
        let eps = spec.epsilon;
        let a = spec.op_a;
        let u_coef = ModeCoefficients::new(&zero, |k2| a.symbol(k2) + shift / eps, dt);
        let v_coef = ModeCoefficients::new(&zero, |k2| spec.op_b.symbol(k2), dt);
        Ok(Self {
            spec,
            shift,
            dt,
            u_coef,
            v_coef,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `((f(u, v) − c u)/ε, g(u, v))`.
    pub fn nonlinear(
        &self,
        u: &SpectralField,
        v: &SpectralField,
    ) -> Result<(SpectralField, SpectralField)> {
        let f = self.spec.eval_f(u, v)?;
        let nu = f.axpy(-self.shift, u).scaled(1.0 / self.spec.epsilon);
        let nv = self.spec.eval_g(u, v)?;
        Ok((nu, nv))
    }

    /// One ETD2RK step.
    pub fn step(&self, state: &FastSlowState) -> Result<FastSlowState> {
        let (nu, nv) = self.nonlinear(&state.u, &state.v)?;
        let au = self.u_coef.predictor(&state.u, &nu);
        let av = self.v_coef.predictor(&state.v, &nv);
        let (nau, nav) = self.nonlinear(&au, &av)?;
        let u = self.u_coef.corrector(&au, &nau, &nu);
        let v = self.v_coef.corrector(&av, &nav, &nv);
        let next = FastSlowState {
            u,
            v,
            t: state.t + self.dt,
        };
        if !next.is_finite() {
            return Err(Error::BlowUp {
                t: next.t,
                reason: "non-finite coefficients".into(),
            });
        }
        Ok(next)
    }
}

/// Default step `min(10⁻³, ε/5)`.
pub fn default_dt(epsilon: f64) -> f64 {
    (1e-3f64).min(epsilon / 5.0)
}

/// Number of steps and the effective step that lands exactly on `T`.
pub fn step_count(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!(
            "horizon and step must be positive (T = {t_end}, dt = {dt})"
        )));
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, t_end / n as f64))
}

/// Sampling of a run: horizon, step, and how often to record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl RunPlan {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            record_every: 1,
        }
    }

    pub fn recording(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }
}

/// Integrate the full system from `(u0, v0)` over `[0, T]`.
pub fn integrate_full(
    spec: &SystemSpec,
    u0: &SpectralField,
    v0: &SpectralField,
    t_end: f64,
    dt: f64,
) -> IntegrationResult {
    integrate_full_sampled(spec, u0, v0, RunPlan::new(t_end, dt))
}

fn empty_trajectory(dt: f64) -> Trajectory {
    Trajectory {
        states: Vec::new(),
        dt,
        step_dt: dt,
        scheme_order: 2,
        cutoff_activated: false,
    }
}

fn fail(error: Error, partial: Trajectory) -> IntegrationFailure {
    IntegrationFailure { error, partial }
}

pub fn integrate_full_sampled(
    spec: &SystemSpec,
    u0: &SpectralField,
    v0: &SpectralField,
    plan: RunPlan,
) -> IntegrationResult {
    let (n, h) = step_count(plan.t_end, plan.dt).map_err(|e| fail(e, empty_trajectory(plan.dt)))?;
    let mut traj = empty_trajectory(h * plan.record_every as f64);
    traj.step_dt = h;
    let stepper = match Stepper::new(spec, h) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, traj)),
    };
    let mut state = match FastSlowState::new(u0.clone(), v0.clone(), 0.0) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, traj)),
    };
    traj.cutoff_activated = !(spec.inside_ball(&state.u) && spec.inside_ball(&state.v));
    traj.states.push(state.clone());
    for i in 1..=n {
        state = match stepper.step(&state) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, traj)),
        };
        state.t = i as f64 * h;
        if !(spec.inside_ball(&state.u) && spec.inside_ball(&state.v)) {
            traj.cutoff_activated = true;
        }
        if i % plan.record_every == 0 || i == n {
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

/// Exponential stepper for `v' = B v + N(v)` on its own.
struct SlowStepper {
    coef: ModeCoefficients,
    dt: f64,
}

impl SlowStepper {
    fn new(template: &SpectralField, op_b: MultiplierOperator, dt: f64) -> Self {
        Self {
            coef: ModeCoefficients::new(template, |k2| op_b.symbol(k2), dt),
            dt,
        }
    }

    fn step(
        &self,
        v: &SpectralField,
        rhs: &dyn Fn(&SpectralField) -> Result<SpectralField>,
    ) -> Result<SpectralField> {
        let n0 = rhs(v)?;
        let a = self.coef.predictor(v, &n0);
        let na = rhs(&a)?;
        Ok(self.coef.corrector(&a, &na, &n0))
    }
}

/// Shared driver of the limit and reduced problems.
fn integrate_slow(
    spec: &SystemSpec,
    graph: &CriticalGraph,
    v0: &SpectralField,
    plan: RunPlan,
    project: &dyn Fn(&SpectralField) -> SpectralField,
) -> IntegrationResult {
    let (n, h) = step_count(plan.t_end, plan.dt).map_err(|e| fail(e, empty_trajectory(plan.dt)))?;
    let mut traj = empty_trajectory(h * plan.record_every as f64);
    traj.step_dt = h;
    let stepper = SlowStepper::new(v0, spec.op_b, h);
    let zero_g = spec.g.rule.terms.is_empty();
    let rhs = |v: &SpectralField| -> Result<SpectralField> {
        if zero_g {
            return Ok(v.zeros_like());
        }
        let u = graph.solve(spec, v)?;
        Ok(project(&spec.eval_g(&u, v)?))
    };
    let mut v = project(v0);
    for i in 0..=n {
        if i > 0 {
            v = match stepper.step(&v, &rhs) {
                Ok(next) => next,
                Err(e) => return Err(fail(final_time(e, (i - 1) as f64 * h), traj)),
            };
            if !v.is_finite() {
                return Err(fail(
                    Error::BlowUp {
                        t: i as f64 * h,
                        reason: "non-finite coefficients".into(),
                    },
                    traj,
                ));
            }
        }
        if i % plan.record_every == 0 || i == n {
            let u = match graph.solve(spec, &v) {
                Ok(u) => u,
                Err(e) => return Err(fail(final_time(e, i as f64 * h), traj)),
            };
            if !(spec.inside_ball(&u) && spec.inside_ball(&v)) {
                traj.cutoff_activated = true;
            }
            traj.states.push(FastSlowState {
                u,
                v: v.clone(),
                t: i as f64 * h,
            });
        }
    }
    debug_assert!((stepper.dt - h).abs() == 0.0);
    Ok(traj)
}

fn final_time(e: Error, t: f64) -> Error {
    match e {
        Error::ImplicitFunction(msg) => {
            Error::ImplicitFunction(format!("final time reached at t = {t:.6e}: {msg}"))
        }
        other => other,
    }
}

/// Limit problem `v' = B v + g(h⁰(v), v)`, `u = h⁰(v)`.
pub fn integrate_limit(
    spec: &SystemSpec,
    graph: &CriticalGraph,
    v0: &SpectralField,
    t_end: f64,
    dt: f64,
) -> IntegrationResult {
    integrate_limit_sampled(spec, graph, v0, RunPlan::new(t_end, dt))
}

pub fn integrate_limit_sampled(
    spec: &SystemSpec,
    graph: &CriticalGraph,
    v0: &SpectralField,
    plan: RunPlan,
) -> IntegrationResult {
    integrate_slow(spec, graph, v0, plan, &|w| w.clone())
}

/// Limit problem confined to the slow modes of `splitting`. Returns the
/// trajectory and the `H²` norm of the discarded fast part of `v0`.
pub fn integrate_reduced(
    spec: &SystemSpec,
    graph: &CriticalGraph,
    splitting: &SplittingSpec,
    v0: &SpectralField,
    plan: RunPlan,
) -> std::result::Result<(Trajectory, f64), IntegrationFailure> {
    let discarded = splitting.project_fast(v0).h2_norm();
    let traj = integrate_slow(spec, graph, v0, plan, &|w| splitting.project_slow(w))?;
    Ok((traj, discarded))
}

/// Explicit solution of `u' = −k² u + (v² − u)/ε`, `v' = −v` with
/// `u(0) = c₁ + c₂²/((k² + 1/ε − 2)ε)`, `v(0) = c₂`.
pub fn ode_closed_form(k: f64, epsilon: f64, c1: f64, c2: f64, t: f64) -> Result<(f64, f64)> {
    let denom = -2.0 + k * k + 1.0 / epsilon;
    if denom == 0.0 {
        return Err(Error::Domain(
            "resonant denominator −2 + k² + 1/ε = 0".into(),
        ));
    }
    let u =
        c1 * (-t * (k * k + 1.0 / epsilon)).exp() + c2 * c2 * (-2.0 * t).exp() / (denom * epsilon);
    Ok((u, c2 * (-t).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::h0_closed_form;
    use crate::system::{PolynomialRule, SystemSpec};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_functions_match_long_series() {
        for &z in &[
            1e-5, 9.9e-5, 1e-4, 0.3, 0.4999, 0.5, 0.7, 1.5, -1e-5, -1e-4, -0.4999, -0.5, -0.8, -1.9,
        ] {
            for (f, p) in [(phi1 as fn(f64) -> f64, 1), (phi2, 2), (phi3, 3)] {
                let reference = phi_series(p, z, 40);
                assert!((f(z) - reference).abs() < 1e-14, "phi{p}({z})");
            }
        }
        assert_eq!(phi1(0.0), 1.0);
        assert_eq!(phi2(0.0), 0.5);
        assert!((phi3(0.0) - 1.0 / 6.0).abs() < 1e-16);
        let z: f64 = -3.0;
        assert!((phi2(z) - (z.exp() - 1.0 - z) / (z * z)).abs() < 1e-15);
    }

    #[test]
    fn linear_flow_matches_semigroups_when_nonlinearities_vanish() {
        let mut spec = SystemSpec::linear_decoupled(0.1).unwrap();
        spec.f.rule = PolynomialRule::zero();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = SpectralField::random_band(32, 10, 1.0, &mut rng);
        let v0 = SpectralField::random_band(32, 10, 1.0, &mut rng);
        let stepper = Stepper::new(&spec, 0.01).unwrap();
        assert_eq!(stepper.shift(), 0.0);
        let next = stepper
            .step(&FastSlowState::new(u0.clone(), v0.clone(), 0.0).unwrap())
            .unwrap();
        let lap = MultiplierOperator::laplacian();
        assert!(next.u.max_abs_diff(&lap.semigroup(0.01, &u0).unwrap()) < 1e-15);
        assert!(next.v.max_abs_diff(&lap.semigroup(0.01, &v0).unwrap()) < 1e-15);
    }

    #[test]
    fn decoupled_single_mode_local_error_is_third_order() {
        // u_k − v_k decays at rate k² + 1/ε, v_k at rate k²
        let eps = 0.1;
        let spec = SystemSpec::linear_decoupled(eps).unwrap();
        let k = 2i64;
        let exact = |h: f64| {
            let v = 0.3 * (-(k * k) as f64 * h).exp();
            let d = (0.5 - 0.3) * (-((k * k) as f64 + 1.0 / eps) * h).exp();
            (d + v, v)
        };
        let mut errs = Vec::new();
        for h in [0.02, 0.01] {
            let mut u = spec.zero_field();
            let mut v = spec.zero_field();
            u.set_mode(k, Complex64::new(0.5, 0.0));
            v.set_mode(k, Complex64::new(0.3, 0.0));
            let s = Stepper::new(&spec, h)
                .unwrap()
                .step(&FastSlowState::new(u, v, 0.0).unwrap())
                .unwrap();
            let (ue, ve) = exact(h);
            assert!((s.v.coeff(k).re - ve).abs() < 1e-15);
            errs.push((s.u.coeff(k).re - ue).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!((6.0..=10.0).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn zero_data_stays_zero() {
        let spec = SystemSpec::benchmark(0.1).unwrap();
        let z = spec.zero_field();
        let traj = integrate_full(&spec, &z, &z, 0.1, 0.01).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj
            .states
            .iter()
            .all(|s| s.u.h2_norm() == 0.0 && s.v.h2_norm() == 0.0));
    }

    #[test]
    fn step_count_lands_on_horizon() {
        let (n, h) = step_count(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert_eq!(h, 0.25);
        assert_eq!(step_count(1.0, 1e-3).unwrap().0, 1000);
        assert!(step_count(0.0, 0.1).is_err());
        assert_eq!(default_dt(0.1), 1e-3);
        assert_eq!(default_dt(1e-3), 2e-4);
    }

    #[test]
    fn linear_oracle_keeps_first_mode_stationary() {
        let spec = SystemSpec::linear_oracle(0.1).unwrap();
        let v0 = SpectralField::cosine(32, 1, 1.0);
        let traj = integrate_full(&spec, &v0.scaled(1.0 / 1.1), &v0, 1.0, 1e-3).unwrap();
        assert!(traj.last().v.max_abs_diff(&v0) < 1e-8);
    }

    #[test]
    fn limit_problem_is_heat_flow_then_graph() {
        let spec = SystemSpec::benchmark(0.1).unwrap();
        let graph = CriticalGraph::default();
        let v0 = SpectralField::cosine(32, 1, 1.0);
        let traj = integrate_limit(&spec, &graph, &v0, 1.0, 1e-2).unwrap();
        let v1 = v0.scaled((-1.0f64).exp());
        assert!(traj.last().v.max_abs_diff(&v1) < 1e-14);
        assert!(traj.last().u.max_abs_diff(&h0_closed_form(&v1).unwrap()) < 1e-13);

        let lin = SystemSpec::linear_oracle(0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v0 = SpectralField::random_band(32, 6, 1.0, &mut rng);
        let traj = integrate_limit(&lin, &graph, &v0, 0.5, 1e-2).unwrap();
        for s in &traj.states {
            assert!(s.u.max_abs_diff(&s.v.dealiased()) < 1e-10);
        }
    }

    #[test]
    fn reduced_problem_discards_fast_modes() {
        let spec = SystemSpec::benchmark(0.1).unwrap();
        let graph = CriticalGraph::default();
        let split = SplittingSpec::with_k0(0.5, 2, 0.1, 0.0, -1.0).unwrap();
        let v0 = &SpectralField::cosine(32, 1, 1.0) + &SpectralField::cosine(32, 5, 1.0);
        let (traj, discarded) =
            integrate_reduced(&spec, &graph, &split, &v0, RunPlan::new(1.0, 0.01)).unwrap();
        assert!((discarded - SpectralField::cosine(32, 5, 1.0).h2_norm()).abs() < 1e-15);
        let expected = SpectralField::cosine(32, 1, (-1.0f64).exp());
        assert!(traj.last().v.max_abs_diff(&expected) < 1e-14);
        for s in &traj.states {
            assert_eq!(split.project_fast(&s.v).h2_norm(), 0.0);
        }
        let slow_v0 = split.project_slow(&v0);
        let limit = integrate_limit(&spec, &graph, &slow_v0, 1.0, 0.01).unwrap();
        assert_eq!(limit.states, traj.states);
    }

    #[test]
    fn closed_form_examples() {
        let (u, v) = ode_closed_form(1.0, 0.1, 1.0, 1.0, 0.0).unwrap();
        assert!((u - (1.0 + 1.0 / 0.9)).abs() < 1e-12);
        assert!((u - 2.1111111).abs() < 1e-7);
        assert_eq!(v, 1.0);
        let (u, _) = ode_closed_form(1.5, 0.2, 0.7, 0.0, 0.3).unwrap();
        assert!((u - 0.7 * (-0.3f64 * (2.25 + 5.0)).exp()).abs() < 1e-15);
        let eps = 1e-3;
        let (u, v) = ode_closed_form(1.0, eps, 1.0, 1.0, 3.0).unwrap();
        assert!((u - v * v).abs() < 5.0 * eps);
        assert!(matches!(
            ode_closed_form(1.0, 1.0, 1.0, 1.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn planar_system_matches_closed_form() {
        let (k, eps, c1, c2) = (1.0, 0.1, 0.5, 0.8);
        let spec = SystemSpec::planar(k, eps).unwrap();
        let (u0, v0) = ode_closed_form(k, eps, c1, c2, 0.0).unwrap();
        let u = SpectralField::constant(1, 1, u0).unwrap();
        let v = SpectralField::constant(1, 1, v0).unwrap();
        let traj =
            integrate_full_sampled(&spec, &u, &v, RunPlan::new(1.0, 1e-4).recording(100)).unwrap();
        for s in &traj.states {
            let (ue, ve) = ode_closed_form(k, eps, c1, c2, s.t).unwrap();
            assert!((s.u.coeff(0).re - ue).abs() <= 1e-8);
            assert!((s.v.coeff(0).re - ve).abs() <= 1e-8);
        }
    }

    #[test]
    fn blow_up_is_reported_with_partial_trajectory() {
        // u' = u³ − u blows up in finite time from u = 10
        let spec = SystemSpec::custom(
            PolynomialRule::new(vec![
                crate::system::Monomial::new(-1.0, 1, 0),
                crate::system::Monomial::new(1.0, 3, 0),
            ]),
            PolynomialRule::zero(),
            1.0,
            None,
        )
        .unwrap();
        let u0 = SpectralField::constant(32, 1, 10.0).unwrap();
        let err = integrate_full(&spec, &u0, &spec.zero_field(), 10.0, 0.01).unwrap_err();
        assert!(matches!(err.error, Error::BlowUp { .. }), "{}", err.error);
        assert!(!err.partial.states.is_empty());
        assert!(err.partial.states.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn cutoff_activation_is_flagged() {
        let spec = SystemSpec::benchmark(0.1).unwrap();
        let big = SpectralField::cosine(32, 1, 0.5);
        let traj = integrate_full(&spec, &big, &spec.zero_field(), 0.01, 1e-3).unwrap();
        assert!(traj.cutoff_activated);
        let small = SpectralField::cosine(32, 1, 0.05);
        let traj = integrate_full(&spec, &small, &small, 0.01, 1e-3).unwrap();
        assert!(!traj.cutoff_activated);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mean_mode_is_conserved_by_heat_flow(seed in 0u64..100) {
            let spec = SystemSpec::benchmark(0.05).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v0 = &SpectralField::random_band(32, 4, 0.15, &mut rng) + &SpectralField::constant(32, 1, 0.02).unwrap();
            let u0 = SpectralField::random_band(32, 4, 0.1, &mut rng);
            let traj = integrate_full(&spec, &u0, &v0, 0.05, 1e-3).unwrap();
            for s in &traj.states {
                prop_assert!((s.v.coeff(0) - v0.coeff(0)).norm() < 1e-12);
            }
        }
    }
}
