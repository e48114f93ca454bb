//! Problem definition for `u_t = A u + f(u, v)/ε`, `v_t = B v + g(u, v)`.
//!
//! Nonlinearities are polynomial rules evaluated pointwise in physical
//! space, optionally damped by a smooth cutoff in the `H²` norm of each
//! argument. [`ModifiedSystem`] carries the linearization of `f` in `u` at a
//! base point, which the integrator and the slow-manifold solver treat
//! exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{MultiplierOperator, SpectralField};

/// Smooth step: 1 on `[0, 1]`, 0 on `[2, ∞)`, `C^∞` in between.
pub fn smooth_step(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let s = r - 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Cutoff factor `ψ(‖x‖_{H²}/σ)`.
pub fn cutoff_factor(h2_norm: f64, sigma: f64) -> f64 {
    smooth_step(h2_norm / sigma)
}

/// `coeff · u^pu · v^pv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    #[serde(default)]
    pub u: u32,
    #[serde(default)]
    pub v: u32,
}

impl Monomial {
    pub fn new(coeff: f64, u: u32, v: u32) -> Self {
        Self { coeff, u, v }
    }
}

/// A polynomial in two scalar variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolynomialRule {
    pub terms: Vec<Monomial>,
}

impl PolynomialRule {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .map(|m| m.coeff * u.powi(m.u as i32) * v.powi(m.v as i32))
            .sum()
    }

    pub fn du(&self, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.u > 0)
            .map(|m| m.coeff * m.u as f64 * u.powi(m.u as i32 - 1) * v.powi(m.v as i32))
            .sum()
    }

    pub fn dv(&self, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.v > 0)
            .map(|m| m.coeff * m.v as f64 * u.powi(m.u as i32) * v.powi(m.v as i32 - 1))
            .sum()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|m| m.u + m.v).max().unwrap_or(0)
    }

    /// Value at the origin, i.e. the constant term.
    pub fn at_origin(&self) -> f64 {
        self.eval(0.0, 0.0)
    }
}

/// Pointwise rule with an optional smooth cutoff of radius `σ`.
///
/// With the cutoff, terms depending only on `u` carry `χ(u)`, terms
/// depending only on `v` carry `χ(v)`, and mixed terms carry both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub rule: PolynomialRule,
    #[serde(default)]
    pub cutoff: Option<f64>,
}

impl Nonlinearity {
    pub fn new(rule: PolynomialRule, cutoff: Option<f64>) -> Self {
        Self { rule, cutoff }
    }

    pub fn cutoff_enabled(&self) -> bool {
        self.cutoff.is_some()
    }

    fn factors(&self, u: &SpectralField, v: &SpectralField) -> (f64, f64) {
        match self.cutoff {
            Some(sigma) => (
                cutoff_factor(u.h2_norm(), sigma),
                cutoff_factor(v.h2_norm(), sigma),
            ),
            None => (1.0, 1.0),
        }
    }

    fn eval_samples(&self, us: &[f64], vs: &[f64], chi_u: f64, chi_v: f64) -> Vec<f64> {
        us.iter()
            .zip(vs)
            .map(|(&u, &v)| {
                self.rule
                    .terms
                    .iter()
                    .map(|m| {
                        let mut w = m.coeff * u.powi(m.u as i32) * v.powi(m.v as i32);
                        if m.u > 0 {
                            w *= chi_u;
                        }
                        if m.v > 0 {
                            w *= chi_v;
                        }
                        w
                    })
                    .sum()
            })
            .collect()
    }

    /// Physical-space evaluation, transformed back and dealiased.
    pub fn eval(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        u.ensure_same_grid(v)?;
        let (chi_u, chi_v) = self.factors(u, v);
        let us = u.to_physical()?;
        let vs = v.to_physical()?;
        let out = self.eval_samples(&us, &vs, chi_u, chi_v);
        let mut field = SpectralField::from_samples(&out, u.k_max(), u.dim())?;
        field.dealias_in_place();
        Ok(field)
    }

    /// Evaluation of the bare rule, ignoring the cutoff and dealiasing.
    pub fn eval_raw_samples(&self, us: &[f64], vs: &[f64]) -> Vec<f64> {
        self.eval_samples(us, vs, 1.0, 1.0)
    }
}

/// Growth and smoothing constants of the two semigroups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupConstants {
    pub omega_a: f64,
    pub omega_b: f64,
    pub m_a: f64,
    pub m_b: f64,
    pub c_a: f64,
    pub c_b: f64,
}

impl SemigroupConstants {
    /// Constants of diagonal multipliers acting on `H²` with smoothing
    /// exponent 1: growth bound `sup m(k)` and unit prefactors.
    pub fn for_multipliers(a: &MultiplierOperator, b: &MultiplierOperator) -> Self {
        Self {
            omega_a: a.growth_bound(),
            omega_b: b.growth_bound(),
            m_a: 1.0,
            m_b: 1.0,
            c_a: 1.0,
            c_b: 1.0,
        }
    }
}

/// Full problem definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub op_a: MultiplierOperator,
    pub op_b: MultiplierOperator,
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub constants: SemigroupConstants,
    /// Cutoff radius in the `H²` norm, when the nonlinearities use one.
    pub sigma: Option<f64>,
    pub k_max: usize,
    pub dim: usize,
}

/// Default cutoff radius of the benchmark.
pub const BENCHMARK_SIGMA: f64 = 0.25;
/// Default Fourier truncation.
pub const DEFAULT_K: usize = 32;

impl SystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        op_a: MultiplierOperator,
        op_b: MultiplierOperator,
        f: PolynomialRule,
        g: PolynomialRule,
        epsilon: f64,
        sigma: Option<f64>,
        k_max: usize,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            constants: SemigroupConstants::for_multipliers(&op_a, &op_b),
            op_a,
            op_b,
            f: Nonlinearity::new(f, sigma),
            g: Nonlinearity::new(g, sigma),
            epsilon,
            gamma: 1.0,
            delta: 1.0,
            sigma,
            k_max,
            dim: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Heat equations with the quadratic reaction `f = v² − u(u + 1)`, `g = 0`.
    pub fn benchmark(epsilon: f64) -> Result<Self> {
        Self::new(
            "benchmark",
            MultiplierOperator::laplacian(),
            MultiplierOperator::laplacian(),
            PolynomialRule::new(vec![
                Monomial::new(1.0, 0, 2),
                Monomial::new(-1.0, 2, 0),
                Monomial::new(-1.0, 1, 0),
            ]),
            PolynomialRule::zero(),
            epsilon,
            Some(BENCHMARK_SIGMA),
            DEFAULT_K,
        )
    }

    /// `f = v − u`, `g = v`: the slow manifold is `u_k = v_k/(1 + ε)`.
    pub fn linear_oracle(epsilon: f64) -> Result<Self> {
        Self::new(
            "linear_oracle",
            MultiplierOperator::laplacian(),
            MultiplierOperator::laplacian(),
            PolynomialRule::new(vec![Monomial::new(1.0, 0, 1), Monomial::new(-1.0, 1, 0)]),
            PolynomialRule::new(vec![Monomial::new(1.0, 0, 1)]),
            epsilon,
            None,
            DEFAULT_K,
        )
    }

    /// `f = v − u`, `g = 0`: the graph `u = v` is invariant.
    pub fn linear_decoupled(epsilon: f64) -> Result<Self> {
        Self::new(
            "linear_decoupled",
            MultiplierOperator::laplacian(),
            MultiplierOperator::laplacian(),
            PolynomialRule::new(vec![Monomial::new(1.0, 0, 1), Monomial::new(-1.0, 1, 0)]),
            PolynomialRule::zero(),
            epsilon,
            None,
            DEFAULT_K,
        )
    }

    /// Planar system `u' = −k² u + (v² − u)/ε`, `v' = −v` carried by
    /// spatially constant fields.
    pub fn planar(k: f64, epsilon: f64) -> Result<Self> {
        Self::new(
            "planar",
            MultiplierOperator::constant(-k * k),
            MultiplierOperator::constant(-1.0),
            PolynomialRule::new(vec![Monomial::new(1.0, 0, 2), Monomial::new(-1.0, 1, 0)]),
            PolynomialRule::zero(),
            epsilon,
            None,
            1,
        )
    }

    /// Heat equations with user polynomial rules.
    pub fn custom(
        f: PolynomialRule,
        g: PolynomialRule,
        epsilon: f64,
        sigma: Option<f64>,
    ) -> Result<Self> {
        Self::new(
            "custom",
            MultiplierOperator::laplacian(),
            MultiplierOperator::laplacian(),
            f,
            g,
            epsilon,
            sigma,
            DEFAULT_K,
        )
    }

    pub fn by_name(name: &str, epsilon: f64) -> Result<Self> {
        match name {
            "benchmark" => Self::benchmark(epsilon),
            "linear_oracle" => Self::linear_oracle(epsilon),
            "linear_decoupled" => Self::linear_decoupled(epsilon),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }

    pub fn with_k_max(mut self, k_max: usize) -> Result<Self> {
        self.k_max = k_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: Option<f64>) -> Result<Self> {
        self.sigma = sigma;
        self.f.cutoff = sigma;
        self.g.cutoff = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        self.dim = dim;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        for (label, x) in [("gamma", self.gamma), ("delta", self.delta)] {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::Config(format!(
                    "{label} must lie in (0, 1], got {x}"
                )));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::Config(format!(
                    "cutoff radius must be positive, got {s}"
                )));
            }
        }
        if self.f.rule.at_origin() != 0.0 || self.g.rule.at_origin() != 0.0 {
            return Err(Error::Config(
                "nonlinearities must vanish at the origin".into(),
            ));
        }
        if self.k_max == 0 || !(1..=3).contains(&self.dim) {
            return Err(Error::Config("invalid grid".into()));
        }
        Ok(())
    }

    pub fn zero_field(&self) -> SpectralField {
        SpectralField::zeros(self.k_max, self.dim).expect("validated grid")
    }

    fn check_grid(&self, w: &SpectralField) -> Result<()> {
        if w.k_max() != self.k_max || w.dim() != self.dim {
            return Err(Error::Config(format!(
                "field grid (K={}, n={}) does not match system (K={}, n={})",
                w.k_max(),
                w.dim(),
                self.k_max,
                self.dim
            )));
        }
        Ok(())
    }

    pub fn eval_f(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        self.check_grid(u)?;
        self.f.eval(u, v)
    }

    pub fn eval_g(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        self.check_grid(u)?;
        self.g.eval(u, v)
    }

    /// Whether `w` lies in the closed ball of radius `σ` (always true without cutoff).
    pub fn inside_ball(&self, w: &SpectralField) -> bool {
        self.sigma.is_none_or(|s| w.h2_norm() <= s)
    }

    fn check_base(&self, base_u: &SpectralField, base_v: &SpectralField) -> Result<()> {
        self.check_grid(base_u)?;
        self.check_grid(base_v)?;
        if let Some(s) = self.sigma {
            let (nu, nv) = (base_u.h2_norm(), base_v.h2_norm());
            if nu > 2.0 * s || nv > 2.0 * s {
                return Err(Error::Domain(format!(
                    "base point (|u|={nu:.3e}, |v|={nv:.3e}) outside the ball of radius {}",
                    2.0 * s
                )));
            }
        }
        Ok(())
    }

    /// Physical samples of `∂f/∂u` at the base point.
    pub fn dxf_samples(&self, base_u: &SpectralField, base_v: &SpectralField) -> Result<Vec<f64>> {
        self.check_base(base_u, base_v)?;
        let us = base_u.to_physical()?;
        let vs = base_v.to_physical()?;
        Ok(us
            .iter()
            .zip(&vs)
            .map(|(&u, &v)| self.f.rule.du(u, v))
            .collect())
    }

    /// The field `∂f/∂u(base_u, base_v)`.
    pub fn dxf_multiplier(
        &self,
        base_u: &SpectralField,
        base_v: &SpectralField,
    ) -> Result<SpectralField> {
        let samples = self.dxf_samples(base_u, base_v)?;
        SpectralField::from_samples(&samples, self.k_max, self.dim)
    }

    /// Taylor-shifted system at `(base_u, base_v)`.
    pub fn build_modified(
        &self,
        base_u: &SpectralField,
        base_v: &SpectralField,
    ) -> Result<ModifiedSystem> {
        let samples = self.dxf_samples(base_u, base_v)?;
        let lambda0 = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lambda0 >= 0.0 {
            return Err(Error::NotNormallyHyperbolic { max: lambda0 });
        }
        let growth = self.epsilon * self.constants.omega_a + lambda0;
        if growth >= 0.0 {
            return Err(Error::InvariantViolation(format!(
                "eps*omega_A + lambda0 = {growth:.3e} must be negative"
            )));
        }
        let shift = samples.iter().sum::<f64>() / samples.len() as f64;
        let spread = samples
            .iter()
            .map(|s| (s - shift).abs())
            .fold(0.0, f64::max);
        let dxf_field = SpectralField::from_samples(&samples, self.k_max, self.dim)?;
        let j_bound = j_operator_norm(self, &dxf_field, spread == 0.0)?;
        Ok(ModifiedSystem {
            base_u: base_u.clone(),
            base_v: base_v.clone(),
            dxf_samples: samples,
            dxf_field,
            lambda0,
            shift,
            constant_dxf: spread == 0.0,
            epsilon: self.epsilon,
            op_a: self.op_a,
            f: self.f.clone(),
            j_bound,
            small_margin: lambda0 > -0.1,
        })
    }

    /// Modified system at the origin, which lies on the critical set.
    pub fn modified_at_origin(&self) -> Result<ModifiedSystem> {
        let zero = self.zero_field();
        self.build_modified(&zero, &zero)
    }
}

/// `(Ã_ε, f̃)` with `Ã_ε = εA + ∂f/∂u(base)` and `f̃ = f − ∂f/∂u(base)·u`.
#[derive(Debug, Clone)]
pub struct ModifiedSystem {
    pub base_u: SpectralField,
    pub base_v: SpectralField,
    pub dxf_samples: Vec<f64>,
    pub dxf_field: SpectralField,
    /// Grid maximum of `∂f/∂u` at the base point.
    pub lambda0: f64,
    /// Grid mean of `∂f/∂u`, used as the diagonal part of `Ã_ε`.
    pub shift: f64,
    pub constant_dxf: bool,
    pub epsilon: f64,
    pub op_a: MultiplierOperator,
    pub f: Nonlinearity,
    /// Estimate of `‖Ã_ε⁻¹ A‖` on `H²`.
    pub j_bound: f64,
    /// Set when `λ₀ > −0.1`.
    pub small_margin: bool,
}

impl ModifiedSystem {
    fn times_dxf(&self, w: &SpectralField) -> Result<SpectralField> {
        if self.constant_dxf {
            return Ok(w.scaled(self.shift));
        }
        let ws = w.to_physical()?;
        let prod: Vec<f64> = ws
            .iter()
            .zip(&self.dxf_samples)
            .map(|(a, b)| a * b)
            .collect();
        SpectralField::from_samples(&prod, w.k_max(), w.dim())
    }

    /// `Ã_ε w = εA w + ∂f/∂u · w`.
    pub fn tilde_a_apply(&self, w: &SpectralField) -> Result<SpectralField> {
        Ok(self
            .op_a
            .apply(w)
            .scaled(self.epsilon)
            .axpy(1.0, &self.times_dxf(w)?))
    }

    /// `f̃(u, v) = f(u, v) − ∂f/∂u · u`.
    pub fn f_tilde(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        Ok(self.f.eval(u, v)?.axpy(-1.0, &self.times_dxf(u)?))
    }

    /// The rule of `f̃` when `∂f/∂u` is the constant `shift`. Agrees with
    /// [`Self::f_tilde`] wherever the cutoff is inactive.
    pub fn f_tilde_nonlinearity(&self) -> Option<Nonlinearity> {
        if !self.constant_dxf {
            return None;
        }
        let mut terms = self.f.rule.terms.clone();
        terms.push(Monomial::new(-self.shift, 1, 0));
        Some(Nonlinearity::new(
            PolynomialRule::new(merge_terms(terms)),
            self.f.cutoff,
        ))
    }

    /// Growth rate `(εω_A + λ₀)/ε` of `e^{tÃ_ε/ε}`.
    pub fn fast_rate(&self, omega_a: f64) -> f64 {
        (self.epsilon * omega_a + self.lambda0) / self.epsilon
    }

    /// Exact symbol of `Ã_ε/ε` on `|k|²` when `∂f/∂u` is constant.
    pub fn scaled_symbol(&self, k_sq: f64) -> f64 {
        self.op_a.symbol(k_sq) + self.shift / self.epsilon
    }
}

fn merge_terms(terms: Vec<Monomial>) -> Vec<Monomial> {
    let mut out: Vec<Monomial> = Vec::new();
    for t in terms {
        match out.iter_mut().find(|m| m.u == t.u && m.v == t.v) {
            Some(m) => m.coeff += t.coeff,
            None => out.push(t),
        }
    }
    out.retain(|m| m.coeff != 0.0);
    out
}

/// Power iteration for `‖Ã_ε⁻¹ A‖_{H²→H²}`. Diagonal when `∂f/∂u` is
/// constant; otherwise a dense Galerkin matrix (1-D only).
fn j_operator_norm(spec: &SystemSpec, dxf: &SpectralField, constant: bool) -> Result<f64> {
    let eps = spec.epsilon;
    if constant {
        let c = dxf.coeffs()[dxf.len() / 2].re;
        let mut best: f64 = 0.0;
        for i in 0..dxf.len() {
            let a = spec.op_a.symbol(dxf.wavenumber_sq(i));
            let denom = eps * a + c;
            if denom == 0.0 {
                return Err(Error::InvariantViolation(
                    "modified operator is singular".into(),
                ));
            }
            best = best.max((a / denom).abs());
        }
        return Ok(best);
    }
    if spec.dim != 1 {
        return Err(Error::Config(
            "non-constant linearization is supported only in one dimension".into(),
        ));
    }
    let k = spec.k_max as i64;
    let n = (2 * k + 1) as usize;
    let weight = |i: usize| 1.0 + ((i as i64 - k) * (i as i64 - k)) as f64;
    let tilde = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let (ki, kj) = (i as i64 - k, j as i64 - k);
        let mut entry = dxf.coeff(ki - kj);
        if i == j {
            entry += eps * spec.op_a.symbol((ki * ki) as f64);
        }
        entry
    });
    let a_diag = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        if i == j {
            let ki = i as i64 - k;
            Complex64::new(spec.op_a.symbol((ki * ki) as f64), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let lu = tilde.lu();
    let j = lu
        .solve(&a_diag)
        .ok_or_else(|| Error::InvariantViolation("modified operator is singular".into()))?;
    // conjugate into the H² weighting so the Euclidean norm is the H² norm
    let m = DMatrix::<Complex64>::from_fn(n, n, |i, c| j[(i, c)] * (weight(i) / weight(c)));
    let mh_m = m.adjoint() * &m;
    let mut x = nalgebra::DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
    let mut rayleigh = 0.0;
    for _ in 0..500 {
        let y = &mh_m * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = x.dotc(&y).re / x.norm_squared();
        x = y / Complex64::new(norm, 0.0);
        if (next - rayleigh).abs() <= 1e-14 * next.abs() {
            rayleigh = next;
            break;
        }
        rayleigh = next;
    }
    Ok(rayleigh.max(0.0).sqrt())
}

/// `ω + M·‖B‖`, the growth bound of a boundedly perturbed semigroup.
pub fn perturbed_growth_bound(omega: f64, m: f64, norm_b: f64) -> f64 {
    omega + m * norm_b
}

/// Sampling protocol for empirical Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzSampling {
    pub k_max: usize,
    /// Highest Fourier mode of the sampled fields.
    pub band: usize,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Sobolev index of the output norm.
    pub out_index: f64,
}

impl LipschitzSampling {
    pub fn new(k_max: usize, radius: f64, samples: usize, seed: u64) -> Self {
        Self {
            k_max,
            band: (k_max / 4).clamp(1, 8),
            radius,
            samples,
            seed,
            out_index: 2.0,
        }
    }
}

/// Largest sampled ratio `‖F(p₁) − F(p₂)‖ / (‖Δu‖_{H²} + ‖Δv‖_{H²})` over
/// pairs in the `H²` ball. A lower bound on the true constant.
///
/// Perturbations cycle through `u` only, `v` only and both, and alternate
/// between large and small (`10⁻³·radius`) sizes.
pub fn estimate_lipschitz_with<F>(cfg: &LipschitzSampling, map: F) -> Result<f64>
where
    F: Fn(&SpectralField, &SpectralField) -> Result<SpectralField>,
{
    if cfg.samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: f64 = 0.0;
    let zero = SpectralField::zeros(cfg.k_max, 1)?;
    for i in 0..cfg.samples {
        let r1 = cfg.radius * rng.gen_range(0.0..1.0);
        let u1 = SpectralField::random_band(cfg.k_max, cfg.band, r1, &mut rng);
        let r1v = cfg.radius * rng.gen_range(0.0..1.0);
        let v1 = SpectralField::random_band(cfg.k_max, cfg.band, r1v, &mut rng);
        let size = if i % 2 == 0 { 1.0 } else { 1e-3 } * cfg.radius * rng.gen_range(0.05..1.0);
        let du = SpectralField::random_band(cfg.k_max, cfg.band, size, &mut rng);
        let dv = SpectralField::random_band(cfg.k_max, cfg.band, size, &mut rng);
        let (du, dv) = match (i / 2) % 3 {
            0 => (du, zero.clone()),
            1 => (zero.clone(), dv),
            _ => (du, dv),
        };
        let u2 = clamp_to_ball(&u1.axpy(1.0, &du), cfg.radius);
        let v2 = clamp_to_ball(&v1.axpy(1.0, &dv), cfg.radius);
        let denom = u2.axpy(-1.0, &u1).h2_norm() + v2.axpy(-1.0, &v1).h2_norm();
        if denom == 0.0 {
            continue;
        }
        let diff = map(&u2, &v2)?.axpy(-1.0, &map(&u1, &v1)?);
        best = best.max(diff.sobolev_norm(cfg.out_index) / denom);
    }
    Ok(best)
}

fn clamp_to_ball(w: &SpectralField, radius: f64) -> SpectralField {
    let n = w.h2_norm();
    if n > radius {
        w.scaled(radius / n)
    } else {
        w.clone()
    }
}

/// Empirical Lipschitz lower bound of a nonlinearity in `H^{2γ}` over the ball.
pub fn estimate_lipschitz(
    nl: &Nonlinearity,
    k_max: usize,
    radius: f64,
    samples: usize,
    seed: u64,
    gamma: f64,
) -> Result<f64> {
    let mut cfg = LipschitzSampling::new(k_max, radius, samples, seed);
    cfg.out_index = 2.0 * gamma;
    estimate_lipschitz_with(&cfg, |u, v| nl.eval(u, v))
}
