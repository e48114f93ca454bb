//! Slow manifold as the fixed point of a backward-time integral operator.
//!
//! For `v₀` in the slow space, a trajectory `(u, v_F, v_S)` on `t ≤ 0` is a
//! fixed point of
//!
//! ```text
//! u(t)   = ∫_{-∞}^t e^{(t−s)L_u} N_u(s) ds
//! v_F(t) = ∫_{-∞}^t e^{(t−s)B} pr_F g(s) ds
//! v_S(t) = e^{tB} v₀ + ∫_0^t e^{(t−s)B} pr_S g(s) ds
//! ```
//!
//! with `L_u = A + c/ε` and `N_u = (f − c·u)/ε`, and the manifold is
//! `v₀ ↦ (u(0), v_F(0))`. Time is truncated to `[−T_back, 0]` on a uniform
//! grid and each integral is evaluated by product quadrature of a
//! piecewise-quadratic interpolant against the exact exponential kernel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical::CriticalGraph;
use crate::error::{Error, Result};
use crate::integrator::{integrate_full_sampled, phi1, phi2, phi3, ModeCoefficients, RunPlan};
use crate::spectral::SpectralField;
use crate::splitting::SplittingSpec;
use crate::system::{ModifiedSystem, SystemSpec};

/// Exponential weight `η = ζ⁻¹(εω_A + λ₀) + (N_S + N_F)/2`, checked to lie
/// strictly between the fast and slow bands `N_F + q` and `N_S + q`.
pub fn compute_eta(
    zeta: f64,
    epsilon: f64,
    omega_a: f64,
    lambda0: f64,
    n_f: f64,
    n_s: f64,
) -> Result<f64> {
    if !(n_s > n_f) {
        return Err(Error::SplittingInconsistent(format!(
            "decay constants must satisfy N_F < N_S (got {n_f}, {n_s})"
        )));
    }
    let q = (epsilon * omega_a + lambda0) / zeta;
    let eta = q + 0.5 * (n_s + n_f);
    if !(n_f + q < eta && eta < n_s + q) {
        return Err(Error::SplittingInconsistent(format!(
            "weight {eta} outside ({}, {})",
            n_f + q,
            n_s + q
        )));
    }
    Ok(eta)
}

/// Iterate of the fixed-point map on nodes `t_j = −j·h`, `j = 0..=m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTrajectory {
    pub nodes: Vec<f64>,
    pub u: Vec<SpectralField>,
    pub v_fast: Vec<SpectralField>,
    pub v_slow: Vec<SpectralField>,
    pub eta: f64,
}

impl WeightedTrajectory {
    pub fn zeros(template: &SpectralField, nodes: Vec<f64>, eta: f64) -> Self {
        let n = nodes.len();
        let z = template.zeros_like();
        Self {
            nodes,
            u: vec![z.clone(); n],
            v_fast: vec![z.clone(); n],
            v_slow: vec![z; n],
            eta,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `max_j e^{−η t_j}(‖u‖ + ‖v_F‖ + ‖v_S‖)` in `H²`.
    pub fn weighted_norm(&self) -> f64 {
        (0..self.len())
            .map(|j| {
                (-self.eta * self.nodes[j]).exp()
                    * (self.u[j].h2_norm() + self.v_fast[j].h2_norm() + self.v_slow[j].h2_norm())
            })
            .fold(0.0, f64::max)
    }

    /// Weighted norm of `self − other`.
    pub fn distance(&self, other: &Self) -> f64 {
        (0..self.len())
            .map(|j| {
                (-self.eta * self.nodes[j]).exp()
                    * (self.u[j].axpy(-1.0, &other.u[j]).h2_norm()
                        + self.v_fast[j].axpy(-1.0, &other.v_fast[j]).h2_norm()
                        + self.v_slow[j].axpy(-1.0, &other.v_slow[j]).h2_norm())
            })
            .fold(0.0, f64::max)
    }
}

/// `max_j e^{−η t_j}(‖u‖ + ‖v_F‖ + ‖v_S‖)`.
pub fn weighted_norm(traj: &WeightedTrajectory) -> f64 {
    traj.weighted_norm()
}

/// A point `(v₀, h(v₀))` of the slow manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowManifoldPoint {
    pub v0: SpectralField,
    pub u_at_0: SpectralField,
    pub v_fast_at_0: SpectralField,
    /// Last fixed-point increment in the weighted norm.
    pub residual: f64,
    pub iterations: usize,
    /// Bound on the neglected `(−∞, −T_back)` contributions.
    pub truncation_bound: f64,
    pub increments: Vec<f64>,
    pub t_back: f64,
    pub step: f64,
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LpConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Backward horizon; derived from the fast rate when absent.
    pub t_back: Option<f64>,
    /// Node spacing; derived when absent.
    pub step: Option<f64>,
    /// Retry once on a longer horizon when the tail bound is too large.
    pub auto_extend: bool,
    /// Upper limit on the node count of an extended horizon.
    pub max_nodes: usize,
    pub graph: CriticalGraph,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            t_back: None,
            step: None,
            auto_extend: true,
            max_nodes: 20_000,
            graph: CriticalGraph::default(),
        }
    }
}

impl LpConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Per-mode weights for one interval `[t_{j+1}, t_j]` of length `h`:
/// `∫ e^{(t_j − s)λ} F(s) ds ≈ h Σ w·F`.
#[derive(Debug, Clone)]
struct QuadRow {
    exp: Vec<f64>,
    /// Weights of `F_j, F_{j+1}, F_{j+2}`.
    inner: [Vec<f64>; 3],
    /// Weights of `F_{j-1}, F_j, F_{j+1}` at the far end of the grid.
    edge: [Vec<f64>; 3],
}

impl QuadRow {
    fn new(template: &SpectralField, symbol: impl Fn(usize) -> f64, h: f64) -> Self {
        let n = template.len();
        let mut exp = Vec::with_capacity(n);
        let mut inner = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        let mut edge = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        for i in 0..n {
            let z = h * symbol(i);
            // moments ∫₀¹ e^{(1−σ)z} σ^p dσ = p! φ_{p+1}(z)
            let (i0, i1, i2) = (phi1(z), phi2(z), 2.0 * phi3(z));
            exp.push(z.exp());
            inner[0].push(0.5 * (i1 + i2));
            inner[1].push(i0 - i2);
            inner[2].push(0.5 * (i2 - i1));
            edge[0].push(0.5 * (i2 - i1));
            edge[1].push(2.0 * i1 - i2);
            edge[2].push(i0 - 1.5 * i1 + 0.5 * i2);
        }
        Self { exp, inner, edge }
    }

    /// `h Σ w·F` over `[t_{j+1}, t_j]`, mode by mode.
    fn integral(&self, f: &[SpectralField], j: usize, h: f64, out: &mut SpectralField) {
        let m = f.len() - 1;
        let (w, idx) = if j + 2 <= m {
            (&self.inner, [j, j + 1, j + 2])
        } else {
            (&self.edge, [j - 1, j, j + 1])
        };
        for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
            *c = (f[idx[0]].coeffs()[i] * w[0][i]
                + f[idx[1]].coeffs()[i] * w[1][i]
                + f[idx[2]].coeffs()[i] * w[2][i])
                * h;
        }
    }
}

/// Discretized fixed-point problem for one system and splitting.
#[derive(Debug, Clone)]
pub struct SlowManifoldSolver<'a> {
    spec: &'a SystemSpec,
    split: &'a SplittingSpec,
    cfg: LpConfig,
    shift: f64,
    eta: f64,
    t_back: f64,
    h: f64,
    m: usize,
    u_row: QuadRow,
    fast_row: QuadRow,
    slow_row: QuadRow,
    u_symbol: Vec<f64>,
    fast_symbol: Vec<f64>,
    slow_mask: Vec<bool>,
}

impl<'a> SlowManifoldSolver<'a> {
    pub fn new(
        spec: &'a SystemSpec,
        modified: &'a ModifiedSystem,
        split: &'a SplittingSpec,
        cfg: LpConfig,
    ) -> Result<Self> {
        if spec.dim != 1 {
            return Err(Error::Config(
                "slow manifolds are supported only in one dimension".into(),
            ));
        }
        let eta = compute_eta(
            split.zeta,
            spec.epsilon,
            spec.constants.omega_a,
            modified.lambda0,
            split.n_f,
            split.n_s,
        )?;
        let rate = (spec.epsilon * spec.constants.omega_a + modified.lambda0).abs();
        let t_back = cfg
            .t_back
            .unwrap_or_else(|| spec.epsilon * (100.0 / cfg.tol).ln() / rate);
        Self::build(spec, split, cfg, eta, t_back, modified.shift)
    }

    fn build(
        spec: &'a SystemSpec,
        split: &'a SplittingSpec,
        cfg: LpConfig,
        eta: f64,
        t_back: f64,
        shift: f64,
    ) -> Result<Self> {
        if !(t_back > 0.0) {
            return Err(Error::Config(format!(
                "backward horizon must be positive, got {t_back}"
            )));
        }
        let rho = split.slow_spectral_radius(&spec.op_b);
        let mut h = cfg.step.unwrap_or_else(|| {
            let mut h = (spec.epsilon / 5.0).min(t_back / 200.0);
            if rho > 0.0 {
                h = h.min(0.0015 / rho);
            }
            h
        });
        let m = ((t_back / h) - 1e-9).ceil().max(2.0) as usize;
        if m + 1 > cfg.max_nodes {
            return Err(Error::Config(format!(
                "backward grid needs {} nodes (limit {})",
                m + 1,
                cfg.max_nodes
            )));
        }
        h = t_back / m as f64;
        let template = spec.zero_field();
        let eps = spec.epsilon;
        let u_symbol: Vec<f64> = (0..template.len())
            .map(|i| spec.op_a.symbol(template.wavenumber_sq(i)) + shift / eps)
            .collect();
        if let Some(bad) = u_symbol.iter().find(|&&s| s >= 0.0) {
            return Err(Error::InvariantViolation(format!(
                "fast linear part has a non-negative rate {bad}"
            )));
        }
        let slow_mask: Vec<bool> = (0..template.len())
            .map(|i| split.is_slow(&template, i))
            .collect();
        let b_symbol: Vec<f64> = (0..template.len())
            .map(|i| spec.op_b.symbol(template.wavenumber_sq(i)))
            .collect();
        let fast_symbol: Vec<f64> = b_symbol
            .iter()
            .zip(&slow_mask)
            .map(|(&b, &slow)| if slow { -1.0 } else { b })
            .collect();
        if let Some(bad) = fast_symbol.iter().find(|&&s| s >= 0.0) {
            return Err(Error::SplittingInconsistent(format!(
                "fast block of B has a non-negative rate {bad}"
            )));
        }
        let u_row = QuadRow::new(&template, |i| u_symbol[i], h);
        let fast_row = QuadRow::new(&template, |i| fast_symbol[i], h);
        let slow_row = QuadRow::new(&template, |i| b_symbol[i], h);
        Ok(Self {
            spec,
            split,
            cfg,
            shift,
            eta,
            t_back,
            h,
            m,
            u_row,
            fast_row,
            slow_row,
            u_symbol,
            fast_symbol,
            slow_mask,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn t_back(&self) -> f64 {
        self.t_back
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.m + 1
    }

    pub fn config(&self) -> &LpConfig {
        &self.cfg
    }

    pub fn splitting(&self) -> &SplittingSpec {
        self.split
    }

    fn nodes(&self) -> Vec<f64> {
        (0..=self.m).map(|j| -(j as f64) * self.h).collect()
    }

    fn check_v0(&self, v0: &SpectralField) -> Result<()> {
        if v0.k_max() != self.spec.k_max || v0.dim() != 1 {
            return Err(Error::Config("v0 grid does not match system".into()));
        }
        if self.split.project_fast(v0).h2_norm() > 0.0 {
            return Err(Error::Config(
                "v0 must be supported on the slow modes".into(),
            ));
        }
        Ok(())
    }

    fn has_g(&self) -> bool {
        !self.spec.g.rule.terms.is_empty()
    }

    fn nonlinear_terms(
        &self,
        traj: &WeightedTrajectory,
    ) -> Result<(Vec<SpectralField>, Vec<SpectralField>)> {
        let mut fs = Vec::with_capacity(traj.len());
        let mut gs = Vec::with_capacity(traj.len());
        for j in 0..traj.len() {
            let v = traj.v_slow[j].axpy(1.0, &traj.v_fast[j]);
            let f = self.spec.eval_f(&traj.u[j], &v)?;
            fs.push(
                f.axpy(-self.shift, &traj.u[j])
                    .scaled(1.0 / self.spec.epsilon),
            );
            gs.push(if self.has_g() {
                self.spec.eval_g(&traj.u[j], &v)?
            } else {
                v.zeros_like()
            });
        }
        Ok((fs, gs))
    }

    /// One application of the fixed-point map.
    pub fn apply(
        &self,
        traj: &WeightedTrajectory,
        v0: &SpectralField,
    ) -> Result<WeightedTrajectory> {
        self.check_v0(v0)?;
        if traj.len() != self.m + 1 {
            return Err(Error::Config(
                "trajectory does not match the node grid".into(),
            ));
        }
        let (fs, gs) = self.nonlinear_terms(traj)?;
        let g_fast: Vec<SpectralField> = gs.iter().map(|g| self.split.project_fast(g)).collect();
        let g_slow: Vec<SpectralField> = gs.iter().map(|g| self.split.project_slow(g)).collect();
        let mut out = WeightedTrajectory::zeros(v0, traj.nodes.clone(), self.eta);
        let m = self.m;
        let h = self.h;
        let mut scratch = v0.zeros_like();

        // rows integrated forward from the far end, closed by the quasi-static tail
        out.u[m] = fs[m].map_modes(|i| -1.0 / self.u_symbol[i]);
        out.v_fast[m] = g_fast[m].map_modes(|i| {
            if self.slow_mask[i] {
                0.0
            } else {
                -1.0 / self.fast_symbol[i]
            }
        });
        for j in (0..m).rev() {
            self.u_row.integral(&fs, j, h, &mut scratch);
            let mut next = out.u[j + 1].map_modes(|i| self.u_row.exp[i]);
            next = next.axpy(1.0, &scratch);
            out.u[j] = next;
            if self.has_g() {
                self.fast_row.integral(&g_fast, j, h, &mut scratch);
                let mut next = out.v_fast[j + 1].map_modes(|i| self.fast_row.exp[i]);
                next = next.axpy(1.0, &scratch);
                out.v_fast[j] = self.split.project_fast(&next);
            }
        }

        // slow row integrated backward from the anchor v_S(0) = v₀
        out.v_slow[0] = v0.clone();
        for j in 0..m {
            let back = if self.has_g() {
                self.slow_row.integral(&g_slow, j, h, &mut scratch);
                out.v_slow[j].axpy(-1.0, &scratch)
            } else {
                out.v_slow[j].clone()
            };
            out.v_slow[j + 1] = self
                .split
                .project_slow(&back.map_modes(|i| 1.0 / self.slow_row.exp[i]));
        }
        Ok(out)
    }

    /// Seed: backward reduced slow flow, `u = h⁰(v_S)`, `v_F = 0`.
    pub fn seed(&self, v0: &SpectralField) -> Result<WeightedTrajectory> {
        self.check_v0(v0)?;
        let mut traj = WeightedTrajectory::zeros(v0, self.nodes(), self.eta);
        traj.v_slow[0] = v0.clone();
        let coef = ModeCoefficients::new(v0, |k2| self.spec.op_b.symbol(k2), -self.h);
        let rhs = |v: &SpectralField| -> Result<SpectralField> {
            if !self.has_g() {
                return Ok(v.zeros_like());
            }
            let u = self.cfg.graph.solve(self.spec, v)?;
            Ok(self.split.project_slow(&self.spec.eval_g(&u, v)?))
        };
        for j in 0..self.m {
            let v = &traj.v_slow[j];
            let next = match (|| -> Result<SpectralField> {
                let n0 = rhs(v)?;
                let a = predictor(&coef, v, &n0);
                let na = rhs(&a)?;
                Ok(corrector(&coef, &a, &na, &n0))
            })() {
                Ok(next) if next.is_finite() => next,
                _ => self.split.slow_group(&self.spec.op_b, -self.h, v),
            };
            traj.v_slow[j + 1] = self.split.project_slow(&next);
        }
        for j in 0..=self.m {
            if let Ok(u) = self.cfg.graph.solve(self.spec, &traj.v_slow[j]) {
                traj.u[j] = u;
            }
        }
        Ok(traj)
    }

    fn fast_rate(&self) -> f64 {
        self.fast_symbol
            .iter()
            .zip(&self.slow_mask)
            .filter(|(_, &slow)| !slow)
            .map(|(&b, _)| b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bound on the neglected tail of one row and the rate at which it decays
    /// as the horizon grows.
    ///
    /// With forcing `‖F(s)‖ ≤ ‖F_m‖ e^{r(t_m − s)}` beyond the far node, the
    /// tail and the error of the closure together are at most
    /// `e^{λ T}‖F_m‖(1/(|λ| − r) + 1/|λ|)`.
    fn row_tail(&self, forcing: &[SpectralField], rate: f64, scale: f64) -> (f64, f64) {
        let m = self.m;
        let far = forcing[m].h2_norm();
        if far == 0.0 {
            return (0.0, f64::INFINITY);
        }
        let near = forcing[m - 1].h2_norm();
        // ratios of round-off carry no growth information
        let growth = if near > 0.0 && far > 1e-12 * scale {
            ((far / near).ln() / self.h).max(0.0)
        } else {
            0.0
        };
        let decay = rate.abs() - growth;
        if decay <= 0.0 {
            return (f64::INFINITY, 0.0);
        }
        let bound = (rate * self.t_back).exp() * far * (1.0 / decay + 1.0 / rate.abs());
        (bound, decay)
    }

    /// `(bound, decay rate)` for the truncated `(−∞, −T_back)` contributions.
    fn tail(&self, traj: &WeightedTrajectory) -> Result<(f64, f64)> {
        let (fs, gs) = self.nonlinear_terms(traj)?;
        let mu = self
            .u_symbol
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let g_fast: Vec<SpectralField> = gs.iter().map(|g| self.split.project_fast(g)).collect();
        let scale = fs
            .iter()
            .chain(&gs)
            .map(SpectralField::h2_norm)
            .fold(0.0, f64::max);
        let (bu, du) = self.row_tail(&fs, mu, scale);
        let (bv, dv) = self.row_tail(&g_fast, self.fast_rate(), scale);
        Ok((bu + bv, du.min(dv)))
    }

    pub fn truncation_bound(&self, traj: &WeightedTrajectory) -> Result<f64> {
        Ok(self.tail(traj)?.0)
    }

    /// Picard iteration on the fixed grid.
    fn iterate(&self, v0: &SpectralField) -> Result<(WeightedTrajectory, Vec<f64>)> {
        let mut x = self.seed(v0)?;
        let mut increments = Vec::new();
        let mut growth = 0;
        for _ in 0..self.cfg.max_iter {
            let next = self.apply(&x, v0)?;
            let inc = next.distance(&x);
            if !inc.is_finite() {
                return Err(Error::Divergence {
                    iterations: increments.len() + 1,
                    reason: "non-finite increment".into(),
                    increments,
                });
            }
            if let Some(&prev) = increments.last() {
                growth = if inc > prev { growth + 1 } else { 0 };
            }
            increments.push(inc);
            x = next;
            if inc <= self.cfg.tol {
                return Ok((x, increments));
            }
            if growth >= 3 {
                return Err(Error::Divergence {
                    iterations: increments.len(),
                    reason: "increment grew in 3 consecutive iterations".into(),
                    increments,
                });
            }
        }
        Err(Error::Divergence {
            iterations: increments.len(),
            reason: format!("no convergence within {} iterations", self.cfg.max_iter),
            increments,
        })
    }

    /// Fixed point and its full backward trajectory.
    pub fn solve_trajectory(
        &self,
        v0: &SpectralField,
    ) -> Result<(SlowManifoldPoint, WeightedTrajectory)> {
        let (x, increments) = self.iterate(v0)?;
        let (bound, decay) = self.tail(&x)?;
        if bound > self.cfg.tol {
            if self.cfg.auto_extend && self.cfg.t_back.is_none() && bound.is_finite() {
                let extended = self.t_back + (100.0 * bound / self.cfg.tol).ln() / decay;
                if extended > self.t_back {
                    let mut cfg = self.cfg.clone();
                    cfg.t_back = Some(extended);
                    cfg.auto_extend = false;
                    let longer =
                        Self::build(self.spec, self.split, cfg, self.eta, extended, self.shift)?;
                    return longer.solve_trajectory(v0);
                }
            }
            return Err(Error::HorizonTooShort {
                bound,
                tol: self.cfg.tol,
            });
        }
        let point = SlowManifoldPoint {
            v0: v0.clone(),
            u_at_0: x.u[0].clone(),
            v_fast_at_0: x.v_fast[0].clone(),
            residual: *increments.last().expect("at least one iteration"),
            iterations: increments.len(),
            truncation_bound: bound,
            increments,
            t_back: self.t_back,
            step: self.h,
        };
        Ok((point, x))
    }

    pub fn solve(&self, v0: &SpectralField) -> Result<SlowManifoldPoint> {
        Ok(self.solve_trajectory(v0)?.0)
    }

    /// `(‖h_u(v₀) − h⁰(v₀)‖_{H²}, ‖h_F(v₀)‖_{H²})`.
    pub fn manifold_distance(&self, point: &SlowManifoldPoint) -> Result<(f64, f64)> {
        let h0 = self.cfg.graph.solve(self.spec, &point.v0)?;
        Ok((
            point.u_at_0.axpy(-1.0, &h0).h2_norm(),
            point.v_fast_at_0.h2_norm(),
        ))
    }

    /// Offset of a state from the manifold over its slow part:
    /// `‖u − h_u(pr_S v)‖ + ‖pr_F v − h_F(pr_S v)‖`.
    pub fn offset(&self, u: &SpectralField, v: &SpectralField) -> Result<f64> {
        let vs = self.split.project_slow(v);
        let p = self.solve(&vs)?;
        Ok(u.axpy(-1.0, &p.u_at_0).h2_norm()
            + self
                .split
                .project_fast(v)
                .axpy(-1.0, &p.v_fast_at_0)
                .h2_norm())
    }

    /// Largest sampled `(‖Δh_u‖ + ‖Δh_F‖)/‖Δv₀‖` over pairs of slow data in
    /// the `H²` ball of the given radius.
    pub fn lipschitz_estimate(&self, radius: f64, samples: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let band = self.split.k0.min(self.spec.k_max).max(1);
        let mut best: f64 = 0.0;
        for i in 0..samples {
            let a = self.split.project_slow(&SpectralField::random_band(
                self.spec.k_max,
                band,
                radius * rng.gen_range(0.0..1.0),
                &mut rng,
            ));
            let size = if i % 2 == 0 { 0.5 } else { 1e-3 } * radius * rng.gen_range(0.05..1.0);
            let d = self.split.project_slow(&SpectralField::random_band(
                self.spec.k_max,
                band,
                size,
                &mut rng,
            ));
            let mut b = a.axpy(1.0, &d);
            if b.h2_norm() > radius {
                b = b.scaled(radius / b.h2_norm());
            }
            let denom = b.axpy(-1.0, &a).h2_norm();
            if denom == 0.0 {
                continue;
            }
            let (pa, pb) = (self.solve(&a)?, self.solve(&b)?);
            let num = pb.u_at_0.axpy(-1.0, &pa.u_at_0).h2_norm()
                + pb.v_fast_at_0.axpy(-1.0, &pa.v_fast_at_0).h2_norm();
            best = best.max(num / denom);
        }
        Ok(best)
    }

    /// Flow the manifold point forward and measure how far the trajectory
    /// drifts off the manifold.
    pub fn invariance_residual(
        &self,
        point: &SlowManifoldPoint,
        t_fwd: f64,
        dt: f64,
        record_every: usize,
    ) -> Result<InvarianceReport> {
        let u0 = &point.u_at_0;
        let v0 = point.v0.axpy(1.0, &point.v_fast_at_0);
        let plan = RunPlan::new(t_fwd, dt).recording(record_every);
        let coarse = integrate_full_sampled(self.spec, u0, &v0, plan)?;
        let fine = integrate_full_sampled(
            self.spec,
            u0,
            &v0,
            RunPlan::new(t_fwd, dt / 2.0).recording(2 * record_every),
        )?;
        let mut residuals = Vec::with_capacity(coarse.states.len());
        let mut integrator_error: f64 = 0.0;
        for (a, b) in coarse.states.iter().zip(&fine.states) {
            let e = a.u.axpy(-1.0, &b.u).h2_norm() + a.v.axpy(-1.0, &b.v).h2_norm();
            integrator_error = integrator_error.max(e * 4.0 / 3.0);
            residuals.push((a.t, self.offset(&a.u, &a.v)?));
        }
        let max = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
        Ok(InvarianceReport {
            max_residual: max,
            integrator_error,
            tolerance: self.cfg.tol,
            residuals,
        })
    }
}

fn predictor(coef: &ModeCoefficients, w: &SpectralField, n: &SpectralField) -> SpectralField {
    let mut out = w.clone();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c = *c * coef.exp[i] + n.coeffs()[i] * coef.phi1[i];
    }
    out
}

fn corrector(
    coef: &ModeCoefficients,
    a: &SpectralField,
    na: &SpectralField,
    n0: &SpectralField,
) -> SpectralField {
    let mut out = a.clone();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c += (na.coeffs()[i] - n0.coeffs()[i]) * coef.phi2[i];
    }
    out
}

/// Outcome of an invariance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub max_residual: f64,
    /// Richardson estimate of the time-stepping error along the run.
    pub integrator_error: f64,
    pub tolerance: f64,
    /// `(t, offset)` at each recorded node.
    pub residuals: Vec<(f64, f64)>,
}

impl InvarianceReport {
    /// `max residual ≤ 10·(tol + integrator error)`.
    pub fn within_contract(&self) -> bool {
        self.max_residual <= 10.0 * (self.tolerance + self.integrator_error)
    }
}

/// One-shot fixed-point solve.
pub fn solve_fixed_point(
    spec: &SystemSpec,
    modified: &ModifiedSystem,
    split: &SplittingSpec,
    v0: &SpectralField,
    tol: f64,
    max_iter: usize,
) -> Result<SlowManifoldPoint> {
    let cfg = LpConfig {
        tol,
        max_iter,
        ..LpConfig::default()
    };
    SlowManifoldSolver::new(spec, modified, split, cfg)?.solve(v0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::h0_closed_form;
    use num_complex::Complex64;

    fn setup(spec: &SystemSpec, zeta: f64) -> (ModifiedSystem, SplittingSpec) {
        let m = spec.modified_at_origin().unwrap();
        let s = SplittingSpec::new(zeta, spec.epsilon, spec.constants.omega_a, m.lambda0).unwrap();
        (m, s)
    }

    #[test]
    fn eta_examples() {
        assert_eq!(compute_eta(0.1, 1e-3, 0.0, -1.0, 1.0, 6.0).unwrap(), -6.5);
        assert!(compute_eta(0.1, 1e-3, 0.0, -1.0, 3.0, 3.0).is_err());
        let a = compute_eta(0.1, 1e-3, 0.0, -1.0, 1.0, 6.0).unwrap();
        let b = compute_eta(0.1, 1e-3, 0.0, -1.0, 1.0, 7.0).unwrap();
        assert!(b > a);
    }

    #[test]
    fn weighted_norm_examples() {
        let template = SpectralField::zeros(8, 1).unwrap();
        let nodes = vec![0.0, -0.5, -1.0];
        let mut t = WeightedTrajectory::zeros(&template, nodes.clone(), -2.0);
        assert_eq!(t.weighted_norm(), 0.0);
        let w = SpectralField::cosine(8, 1, 1.0);
        t.u = vec![w.clone(), w.scaled(0.0), w.scaled(10.0)];
        assert!((t.weighted_norm() - 10.0 * (-2.0f64).exp() * w.h2_norm()).abs() < 1e-14);
        let mut single = WeightedTrajectory::zeros(&template, nodes, -2.0);
        single.u[0] = w.clone();
        single.v_slow[0] = w.scaled(2.0);
        assert!((single.weighted_norm() - 3.0 * w.h2_norm()).abs() < 1e-15);
    }

    #[test]
    fn quadrature_is_exact_for_quadratics() {
        let template = SpectralField::zeros(1, 1).unwrap();
        let lambda = -7.0;
        let h = 0.05;
        let row = QuadRow::new(&template, |_| lambda, h);
        // F(s) = 1 + 2s + 3s² on nodes t_j = −jh
        let poly = |s: f64| 1.0 + 2.0 * s + 3.0 * s * s;
        let nodes: Vec<f64> = (0..4).map(|j| -(j as f64) * h).collect();
        let fs: Vec<SpectralField> = nodes
            .iter()
            .map(|&t| SpectralField::constant(1, 1, poly(t)).unwrap())
            .collect();
        let mut out = template.clone();
        for j in [0usize, 2] {
            row.integral(&fs, j, h, &mut out);
            let (a, b) = (nodes[j + 1], nodes[j]);
            // Simpson with many panels as an independent reference
            let n = 20000;
            let dx = (b - a) / n as f64;
            let g = |s: f64| (lambda * (b - s)).exp() * poly(s);
            let mut sum = g(a) + g(b);
            for i in 1..n {
                sum += g(a + i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let reference = sum * dx / 3.0;
            assert!((out.coeff(0).re - reference).abs() < 1e-13, "j = {j}");
        }
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let spec = SystemSpec::benchmark(1e-3).unwrap();
        let (m, s) = setup(&spec, 0.1);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        let zero = spec.zero_field();
        let p = solver.solve(&zero).unwrap();
        assert_eq!(p.iterations, 1);
        assert_eq!(p.u_at_0.h2_norm(), 0.0);
        assert_eq!(p.v_fast_at_0.h2_norm(), 0.0);
        let traj = WeightedTrajectory::zeros(&zero, solver.nodes(), solver.eta());
        assert_eq!(solver.apply(&traj, &zero).unwrap().weighted_norm(), 0.0);
    }

    #[test]
    fn fast_initial_data_is_rejected() {
        let spec = SystemSpec::benchmark(1e-3).unwrap();
        let (m, s) = setup(&spec, 0.1);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        assert!(matches!(
            solver.solve(&SpectralField::cosine(32, 5, 0.1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn decoupled_manifold_is_the_critical_graph() {
        let spec = SystemSpec::linear_decoupled(0.1).unwrap();
        let (m, s) = setup(&spec, 0.25);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        let v0 = &SpectralField::cosine(32, 1, 0.3) + &SpectralField::cosine(32, 2, 0.1);
        let p = solver.solve(&v0).unwrap();
        assert!(
            p.u_at_0.axpy(-1.0, &v0).h2_norm() < 1e-9,
            "{}",
            p.u_at_0.axpy(-1.0, &v0).h2_norm()
        );
        assert_eq!(p.v_fast_at_0.h2_norm(), 0.0);
        let (du, dv) = solver.manifold_distance(&p).unwrap();
        assert!(du < 1e-9 && dv == 0.0);
    }

    #[test]
    fn linear_oracle_coefficient_is_one_over_one_plus_eps() {
        let eps = 0.1;
        let spec = SystemSpec::linear_oracle(eps).unwrap();
        let (m, s) = setup(&spec, 0.5);
        assert_eq!(s.k0, 1);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        let mut v0 = spec.zero_field();
        v0.set_mode(0, Complex64::new(0.2, 0.0));
        v0.set_mode(1, Complex64::new(0.3, -0.1));
        let p = solver.solve(&v0).unwrap();
        for k in -1..=1 {
            let ratio = p.u_at_0.coeff(k) / v0.coeff(k);
            assert!(
                (ratio - Complex64::new(1.0 / (1.0 + eps), 0.0)).norm() < 1e-6,
                "k = {k}: {ratio}"
            );
        }
        let (du, _) = solver.manifold_distance(&p).unwrap();
        let expected = eps / (1.0 + eps) * v0.h2_norm();
        assert!((du - expected).abs() < 1e-6 * v0.h2_norm());
        // one more application at the fixed point changes nothing
        let (_, traj) = solver.solve_trajectory(&v0).unwrap();
        let again = solver.apply(&traj, &v0).unwrap();
        assert!(again.distance(&traj) <= 1e-9);
    }

    #[test]
    fn benchmark_manifold_is_tangent_to_critical_graph() {
        let spec = SystemSpec::benchmark(1e-3).unwrap();
        let (m, s) = setup(&spec, 0.1);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        for amp in [0.02, 0.04, 0.08] {
            let v0 = SpectralField::cosine(32, 1, amp);
            let p = solver.solve(&v0).unwrap();
            assert!(p.residual <= 1e-10);
            assert!(p.truncation_bound <= 1e-10);
            let h0 = h0_closed_form(&v0).unwrap();
            let dist = p.u_at_0.axpy(-1.0, &h0).h2_norm();
            assert!(
                dist <= 10.0 * amp * amp * spec.epsilon + 1e-9,
                "amp {amp}: {dist}"
            );
            assert!(p.u_at_0.axpy(-1.0, &v0.scaled(0.0)).h2_norm() <= 2.0 * amp * amp);
        }
    }

    #[test]
    fn increments_contract() {
        let spec = SystemSpec::benchmark(1e-3).unwrap();
        let (m, s) = setup(&spec, 0.1);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v0 = s.project_slow(&SpectralField::random_band(32, 3, 0.2, &mut rng));
        let p = solver.solve(&v0).unwrap();
        for w in p.increments.windows(2) {
            if w[0] > 1e-13 {
                assert!(w[1] / w[0] <= 0.5, "{:?}", p.increments);
            }
        }
    }

    #[test]
    fn manifold_map_lipschitz() {
        let spec = SystemSpec::linear_oracle(0.1).unwrap();
        let (m, s) = setup(&spec, 0.5);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        // the map is linear with every coefficient 1/(1+ε)
        let l = solver.lipschitz_estimate(0.5, 6, 1).unwrap();
        assert!((l - 1.0 / 1.1).abs() < 1e-6, "{l}");
    }

    #[test]
    fn horizon_too_short_is_reported() {
        let spec = SystemSpec::benchmark(1e-3).unwrap();
        let (m, s) = setup(&spec, 0.1);
        let cfg = LpConfig {
            t_back: Some(2e-3),
            ..LpConfig::default()
        };
        let solver = SlowManifoldSolver::new(&spec, &m, &s, cfg).unwrap();
        let err = solver
            .solve(&SpectralField::cosine(32, 1, 0.1))
            .unwrap_err();
        assert!(matches!(err, Error::HorizonTooShort { .. }), "{err}");
    }

    #[test]
    fn divergence_is_reported_with_history() {
        // strongly nonlinear reaction outside any contraction regime
        let spec = SystemSpec::custom(
            crate::system::PolynomialRule::new(vec![
                crate::system::Monomial::new(-1.0, 1, 0),
                crate::system::Monomial::new(40.0, 2, 0),
                crate::system::Monomial::new(40.0, 0, 2),
            ]),
            crate::system::PolynomialRule::zero(),
            0.5,
            None,
        )
        .unwrap();
        let (m, s) = setup(&spec, 0.6);
        let cfg = LpConfig {
            max_iter: 30,
            ..LpConfig::default()
        };
        let solver = SlowManifoldSolver::new(&spec, &m, &s, cfg).unwrap();
        let err = solver
            .solve(&SpectralField::cosine(32, 1, 0.3))
            .unwrap_err();
        match err {
            Error::Divergence { increments, .. } => assert!(!increments.is_empty()),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn decoupled_invariance() {
        let spec = SystemSpec::linear_decoupled(0.1).unwrap();
        let (m, s) = setup(&spec, 0.25);
        let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
        let v0 = SpectralField::cosine(32, 1, 0.3);
        let p = solver.solve(&v0).unwrap();
        let report = solver.invariance_residual(&p, 1.0, 1e-4, 2000).unwrap();
        assert!(report.within_contract());
        assert!(report.max_residual <= 1e-8, "{}", report.max_residual);
        let zero = solver.solve(&spec.zero_field()).unwrap();
        assert_eq!(
            solver
                .invariance_residual(&zero, 0.2, 1e-2, 5)
                .unwrap()
                .max_residual,
            0.0
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn anchor_and_fast_part(seed in 0u64..1000, amp in 0.0f64..0.2) {
            let spec = SystemSpec::benchmark(1e-3).unwrap();
            let (m, s) = setup(&spec, 0.1);
            let solver = SlowManifoldSolver::new(&spec, &m, &s, LpConfig::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v0 = s.project_slow(&SpectralField::random_band(32, 3, amp, &mut rng));
            let (p, traj) = solver.solve_trajectory(&v0).unwrap();
            proptest::prop_assert_eq!(&traj.v_slow[0], &v0);
            proptest::prop_assert_eq!(p.v_fast_at_0.h2_norm(), 0.0);
            proptest::prop_assert!(traj.weighted_norm() >= 0.0);
            let again = solver.apply(&traj, &v0).unwrap();
            proptest::prop_assert_eq!(&again.v_slow[0], &v0);
            proptest::prop_assert!(again.distance(&traj) <= 1e-10);
        }
    }
}
