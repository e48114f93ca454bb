//! Fourier slow/fast decomposition of the slow variable at a cut mode `k₀`.
//!
//! With `q = ζ⁻¹(εω_A + λ₀)` the cut satisfies `−(k₀+1)² < q ≤ −k₀²`, and the
//! decay constants are `N_F = −q − k₀²`, `N_S = −q − (k₀−1)²`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::spectral::{MultiplierOperator, SpectralField};

/// Cut mode for the scaled growth rate `q = ζ⁻¹(εω_A + λ₀)`.
pub fn select_k0_from_rate(q: f64) -> Result<usize> {
    if !(q < 0.0) || !q.is_finite() {
        return Err(Error::Config(format!(
            "scaled growth rate must be negative and finite, got {q}"
        )));
    }
    let target = -q;
    let mut k0 = target.sqrt().floor() as usize;
    while ((k0 + 1) * (k0 + 1)) as f64 <= target {
        k0 += 1;
    }
    while k0 > 0 && ((k0 * k0) as f64) > target {
        k0 -= 1;
    }
    if k0 == 0 {
        return Err(Error::ZetaTooLarge(q));
    }
    Ok(k0)
}

pub fn select_k0(zeta: f64, epsilon: f64, omega_a: f64, lambda0: f64) -> Result<usize> {
    if !(zeta > 0.0) {
        return Err(Error::Config(format!("zeta must be positive, got {zeta}")));
    }
    select_k0_from_rate((epsilon * omega_a + lambda0) / zeta)
}

/// The splitting of `Y = Y_S ⊕ Y_F` and its decay constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingSpec {
    pub zeta: f64,
    pub k0: usize,
    pub n_f: f64,
    pub n_s: f64,
    pub lambda0: f64,
    pub epsilon: f64,
    pub omega_a: f64,
    /// Set when `N_F` came out negative and was clipped to 0.
    pub n_f_clipped: bool,
}

impl SplittingSpec {
    pub fn new(zeta: f64, epsilon: f64, omega_a: f64, lambda0: f64) -> Result<Self> {
        let k0 = select_k0(zeta, epsilon, omega_a, lambda0)?;
        Self::with_k0(zeta, k0, epsilon, omega_a, lambda0)
    }

    /// Splitting with a prescribed cut mode.
    pub fn with_k0(zeta: f64, k0: usize, epsilon: f64, omega_a: f64, lambda0: f64) -> Result<Self> {
        if k0 == 0 {
            return Err(Error::Config("cut mode must be at least 1".into()));
        }
        if !(zeta > 0.0) {
            return Err(Error::Config(format!("zeta must be positive, got {zeta}")));
        }
        let q = (epsilon * omega_a + lambda0) / zeta;
        let k0f = k0 as f64;
        let raw_f = -q - k0f * k0f;
        let n_s = -q - (k0f - 1.0) * (k0f - 1.0);
        let (n_f, n_f_clipped) = if raw_f < 0.0 {
            (0.0, true)
        } else {
            (raw_f, false)
        };
        if !(n_f < n_s) {
            return Err(Error::SplittingInconsistent(format!(
                "decay constants N_F = {n_f} and N_S = {n_s} are not ordered"
            )));
        }
        Ok(Self {
            zeta,
            k0,
            n_f,
            n_s,
            lambda0,
            epsilon,
            omega_a,
            n_f_clipped,
        })
    }

    /// `ζ⁻¹(εω_A + λ₀)`.
    pub fn scaled_rate(&self) -> f64 {
        (self.epsilon * self.omega_a + self.lambda0) / self.zeta
    }

    pub fn decay_constants(&self) -> (f64, f64) {
        (self.n_f, self.n_s)
    }

    /// Spectral gap `2k₀ − 1`.
    pub fn gap(&self) -> f64 {
        (2 * self.k0 - 1) as f64
    }

    /// `|N_S − N_F − (2k₀ − 1)|`; zero up to rounding unless `N_F` was clipped.
    pub fn gap_defect(&self) -> f64 {
        (self.n_s - self.n_f - self.gap()).abs()
    }

    pub fn is_slow(&self, field: &SpectralField, idx: usize) -> bool {
        field.max_abs_component(idx) <= self.k0
    }

    pub fn project_slow(&self, w: &SpectralField) -> SpectralField {
        w.map_modes(|i| if self.is_slow(w, i) { 1.0 } else { 0.0 })
    }

    pub fn project_fast(&self, w: &SpectralField) -> SpectralField {
        w.map_modes(|i| if self.is_slow(w, i) { 0.0 } else { 1.0 })
    }

    /// `e^{tB}` on the slow block for any real `t`.
    pub fn slow_group(
        &self,
        op_b: &MultiplierOperator,
        t: f64,
        w: &SpectralField,
    ) -> SpectralField {
        w.map_modes(|i| {
            if self.is_slow(w, i) {
                (t * op_b.symbol(w.wavenumber_sq(i))).exp()
            } else {
                0.0
            }
        })
    }

    /// `e^{tB}` on the fast block, `t ≥ 0`.
    pub fn fast_semigroup(
        &self,
        op_b: &MultiplierOperator,
        t: f64,
        w: &SpectralField,
    ) -> Result<SpectralField> {
        if t < 0.0 {
            return Err(Error::Domain(format!(
                "fast block has no backward flow (t = {t})"
            )));
        }
        Ok(w.map_modes(|i| {
            if self.is_slow(w, i) {
                0.0
            } else {
                (t * op_b.symbol(w.wavenumber_sq(i))).exp()
            }
        }))
    }

    /// `B⁻¹` on the fast block.
    pub fn fast_inverse(
        &self,
        op_b: &MultiplierOperator,
        w: &SpectralField,
    ) -> Result<SpectralField> {
        let mut out = self.project_fast(w);
        for i in 0..out.len() {
            if self.is_slow(w, i) {
                continue;
            }
            let m = op_b.symbol(w.wavenumber_sq(i));
            if m == 0.0 {
                return Err(Error::Domain("B is singular on the fast block".into()));
            }
            out.coeffs_mut()[i] /= m;
        }
        Ok(out)
    }

    /// `max |B(k)|` over slow modes.
    pub fn slow_spectral_radius(&self, op_b: &MultiplierOperator) -> f64 {
        (0..=self.k0)
            .map(|k| op_b.symbol((k * k) as f64).abs())
            .fold(0.0, f64::max)
    }

    /// `max B(k)` over fast modes `k₀ < |k| ≤ K`.
    pub fn fast_growth(&self, op_b: &MultiplierOperator, k_max: usize) -> f64 {
        (self.k0 + 1..=k_max.max(self.k0 + 1))
            .map(|k| op_b.symbol((k * k) as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Inputs of the contraction constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionParams {
    pub l_ftilde: f64,
    pub c_a: f64,
    pub l_g: f64,
    pub c_b: f64,
    pub m_b: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub omega_a: f64,
    pub lambda0: f64,
    pub n_f: f64,
    pub n_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub l: f64,
    /// `M_B/(1 − L)` when `L < 1`.
    pub l_zeta: Option<f64>,
}

impl ContractionReport {
    pub fn contracting(&self) -> bool {
        self.l < 1.0
    }
}

/// Contraction constant of the backward fixed-point map:
///
/// ```text
/// L = 2^γ L_f̃ C_A Γ(γ) / (2(εζ⁻¹ − 1)(εω_A + λ₀) + ε(N_S + N_F))^γ
///   + 2^δ L_g C_B Γ(δ) / (N_S − N_F)^δ
///   + 2 L_g M_B Γ(δ) / (N_S − N_F)
/// ```
pub fn contraction_constant(p: &ContractionParams) -> Result<ContractionReport> {
    let fast_denom = 2.0 * (p.epsilon / p.zeta - 1.0) * (p.epsilon * p.omega_a + p.lambda0)
        + p.epsilon * (p.n_s + p.n_f);
    let gap = p.n_s - p.n_f;
    if !(fast_denom > 0.0) || !(gap > 0.0) {
        return Err(Error::Domain(format!(
            "contraction denominators must be positive (fast {fast_denom:.3e}, gap {gap:.3e})"
        )));
    }
    let term_f =
        2f64.powf(p.gamma) * p.l_ftilde * p.c_a * gamma(p.gamma) / fast_denom.powf(p.gamma);
    let term_g = 2f64.powf(p.delta) * p.l_g * p.c_b * gamma(p.delta) / gap.powf(p.delta);
    let term_m = 2.0 * p.l_g * p.m_b * gamma(p.delta) / gap;
    let l = term_f + term_g + term_m;
    Ok(ContractionReport {
        l,
        l_zeta: (l < 1.0).then(|| p.m_b / (1.0 - l)),
    })
}

/// Regime checks for a parameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFlags {
    /// `εζ⁻¹ < 1`.
    pub eps_over_zeta_below_one: bool,
    /// `εω_A + λ₀ < 0`.
    pub growth_negative: bool,
    /// `L < 1`, when `L` is known.
    pub contraction: Option<bool>,
}

impl RegimeFlags {
    pub fn all_pass(&self) -> bool {
        self.eps_over_zeta_below_one && self.growth_negative && self.contraction.unwrap_or(true)
    }
}

pub fn check_regime(
    epsilon: f64,
    zeta: f64,
    omega_a: f64,
    lambda0: f64,
    l: Option<f64>,
) -> RegimeFlags {
    RegimeFlags {
        eps_over_zeta_below_one: epsilon / zeta < 1.0,
        growth_negative: epsilon * omega_a + lambda0 < 0.0,
        contraction: l.map(|l| l < 1.0),
    }
}

/// Serialized splitting diagnostics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingDiagnostics {
    pub zeta: f64,
    pub k0: usize,
    #[serde(rename = "N_F")]
    pub n_f: f64,
    #[serde(rename = "N_S")]
    pub n_s: f64,
    pub gap: f64,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "L_zeta")]
    pub l_zeta: Option<f64>,
    pub regime_flags: RegimeFlags,
}

impl SplittingDiagnostics {
    pub fn new(split: &SplittingSpec, contraction: Option<ContractionReport>) -> Self {
        Self {
            zeta: split.zeta,
            k0: split.k0,
            n_f: split.n_f,
            n_s: split.n_s,
            gap: split.gap(),
            l: contraction.map(|c| c.l),
            l_zeta: contraction.and_then(|c| c.l_zeta),
            regime_flags: check_regime(
                split.epsilon,
                split.zeta,
                split.omega_a,
                split.lambda0,
                contraction.map(|c| c.l),
            ),
        }
    }
}
