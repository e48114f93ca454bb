//! Truncated Fourier representation of real fields on the periodic torus
//! `T^n = [0, 2π)^n` and diagonal (Fourier multiplier) operators acting on them.
//!
//! Coefficients are stored for every wavevector with components in `-K..=K`,
//! row-major with the first axis slowest. The physical grid has `N = 2K + 1`
//! points per axis at `x_j = 2πj/N`, and
//!
//! ```text
//! w(x) = Σ_k ŵ(k) e^{i k·x},    ŵ(k) = N^{-n} Σ_j w(x_j) e^{-i k·x_j}.
//! ```

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

pub use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the Hermitian-symmetry check in `to_physical`.
const HERMITIAN_TOL: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(len)
        } else {
            p.plan_fft_inverse(len)
        }
    })
}

/// A real scalar field on `T^n` held as truncated Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    k_max: usize,
    dim: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(k_max: usize, dim: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Config("truncation K must be at least 1".into()));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!(
                "domain dimension must be 1, 2 or 3 (got {dim})"
            )));
        }
        let side = 2 * k_max + 1;
        Ok(Self {
            k_max,
            dim,
            coeffs: vec![Complex64::new(0.0, 0.0); side.pow(dim as u32)],
        })
    }

    /// Same grid as `self`, all coefficients zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            k_max: self.k_max,
            dim: self.dim,
            coeffs: vec![Complex64::new(0.0, 0.0); self.coeffs.len()],
        }
    }

    pub fn from_coeffs(k_max: usize, dim: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        let mut field = Self::zeros(k_max, dim)?;
        if coeffs.len() != field.coeffs.len() {
            return Err(Error::Config(format!(
                "expected {} coefficients, got {}",
                field.coeffs.len(),
                coeffs.len()
            )));
        }
        field.coeffs = coeffs;
        Ok(field)
    }

    /// Transform physical samples (row-major, `N^n` values) to coefficients.
    /// Hermitian symmetry is enforced exactly on the result.
    pub fn from_samples(samples: &[f64], k_max: usize, dim: usize) -> Result<Self> {
        let mut field = Self::zeros(k_max, dim)?;
        let n = field.grid_size();
        if samples.len() != n.pow(dim as u32) {
            return Err(Error::Config(format!(
                "expected {} samples for grid {n}^{dim}, got {}",
                n.pow(dim as u32),
                samples.len()
            )));
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_nd(&mut buf, n, dim, true);
        let scale = 1.0 / buf.len() as f64;
        // buf is indexed by k mod N along each axis; coefficients by k + K.
        for (idx, c) in field.coeffs.iter_mut().enumerate() {
            let src = remap_index(idx, n, dim, k_max, false);
            *c = buf[src] * scale;
        }
        field.symmetrize();
        Ok(field)
    }

    /// Transform any number `N ≥ 3` of uniform 1-D samples, keeping wavenumbers
    /// `|k| ≤ ⌊(N-1)/2⌋`. For even `N` the Nyquist mode is dropped.
    pub fn from_uniform_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 3 {
            return Err(Error::Config(format!("need at least 3 samples, got {n}")));
        }
        let k_max = (n - 1) / 2;
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        plan(n, true).process(&mut buf);
        let mut field = Self::zeros(k_max, 1)?;
        for k in -(k_max as i64)..=k_max as i64 {
            field.coeffs[(k + k_max as i64) as usize] =
                buf[k.rem_euclid(n as i64) as usize] / n as f64;
        }
        field.symmetrize();
        Ok(field)
    }

    /// Sample a function of one variable on the 1-D grid.
    pub fn from_fn_1d(k_max: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = 2 * k_max + 1;
        let samples: Vec<f64> = (0..n)
            .map(|j| f(2.0 * std::f64::consts::PI * j as f64 / n as f64))
            .collect();
        Self::from_samples(&samples, k_max, 1).expect("1-D grid sized from k_max")
    }

    /// `amplitude · cos(mode · x)` on the 1-D grid.
    pub fn cosine(k_max: usize, mode: usize, amplitude: f64) -> Self {
        let mut field = Self::zeros(k_max, 1).expect("valid 1-D grid");
        if mode == 0 {
            field.set_mode(0, Complex64::new(amplitude, 0.0));
        } else if mode <= k_max {
            field.set_mode(mode as i64, Complex64::new(0.5 * amplitude, 0.0));
        }
        field
    }

    /// Spatially constant field.
    pub fn constant(k_max: usize, dim: usize, value: f64) -> Result<Self> {
        let mut field = Self::zeros(k_max, dim)?;
        let centre = field.coeffs.len() / 2;
        field.coeffs[centre] = Complex64::new(value, 0.0);
        Ok(field)
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spatial samples per axis, `2K + 1`.
    pub fn grid_size(&self) -> usize {
        2 * self.k_max + 1
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.k_max == other.k_max && self.dim == other.dim
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "grid mismatch: (K={}, n={}) vs (K={}, n={})",
                self.k_max, self.dim, other.k_max, other.dim
            )))
        }
    }

    /// Wavevector of the coefficient at `idx` (unused axes are 0).
    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let side = self.grid_size();
        let mut out = [0i64; 3];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = (rem % side) as i64 - self.k_max as i64;
            rem /= side;
        }
        out
    }

    /// `|k|²` of the coefficient at `idx`.
    pub fn wavenumber_sq(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
    }

    /// Largest absolute component of the wavevector at `idx`.
    pub fn max_abs_component(&self, idx: usize) -> usize {
        let k = self.wavevector(idx);
        k.iter()
            .map(|c| c.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    fn index_1d(&self, k: i64) -> Option<usize> {
        let shifted = k + self.k_max as i64;
        (self.dim == 1 && shifted >= 0 && shifted <= 2 * self.k_max as i64)
            .then_some(shifted as usize)
    }

    /// Coefficient of wavenumber `k` on a 1-D grid; zero outside the band.
    pub fn coeff(&self, k: i64) -> Complex64 {
        self.index_1d(k)
            .map(|i| self.coeffs[i])
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// Set `ŵ(k) = c` and `ŵ(-k) = conj(c)` on a 1-D grid.
    pub fn set_mode(&mut self, k: i64, c: Complex64) {
        if let (Some(i), Some(j)) = (self.index_1d(k), self.index_1d(-k)) {
            if k == 0 {
                self.coeffs[i] = Complex64::new(c.re, 0.0);
            } else {
                self.coeffs[i] = c;
                self.coeffs[j] = c.conj();
            }
        }
    }

    fn mirror(&self, idx: usize) -> usize {
        self.coeffs.len() - 1 - idx
    }

    /// Largest deviation from `ŵ(-k) = conj(ŵ(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (c - self.coeffs[self.mirror(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    fn symmetrize(&mut self) {
        let len = self.coeffs.len();
        for i in 0..=len / 2 {
            let j = len - 1 - i;
            let avg = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
            self.coeffs[i] = avg;
            self.coeffs[j] = avg.conj();
        }
    }

    /// Transform to physical samples (row-major). Fails when the coefficients
    /// are not the spectrum of a real field.
    pub fn to_physical(&self) -> Result<Vec<f64>> {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        let defect = self.hermitian_defect();
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::InvariantViolation(format!(
                "Hermitian symmetry broken (defect {defect:.3e})"
            )));
        }
        let n = self.grid_size();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.coeffs.len()];
        for (idx, c) in self.coeffs.iter().enumerate() {
            buf[remap_index(idx, n, self.dim, self.k_max, false)] = *c;
        }
        fft_nd(&mut buf, n, self.dim, false);
        Ok(buf.into_iter().map(|z| z.re).collect())
    }

    /// `‖w‖_{H^s} = (Σ_k (1 + |k|²)^s |ŵ(k)|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (1.0 + self.wavenumber_sq(i)).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Shorthand for the `H²` norm used throughout.
    pub fn h2_norm(&self) -> f64 {
        self.sobolev_norm(2.0)
    }

    /// Largest coefficient-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Cut-off wavenumber of the two-thirds rule, `⌊2K/3⌋`.
    pub fn dealias_cutoff(&self) -> usize {
        2 * self.k_max / 3
    }

    /// Zero every coefficient with a component above `⌊2K/3⌋`.
    pub fn dealiased(&self) -> Self {
        let mut out = self.clone();
        out.dealias_in_place();
        out
    }

    pub fn dealias_in_place(&mut self) {
        let cut = self.dealias_cutoff();
        for i in 0..self.coeffs.len() {
            if self.max_abs_component(i) > cut {
                self.coeffs[i] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Apply `c_k ↦ m(k) c_k` for an arbitrary per-index factor.
    pub fn map_modes(&self, mut factor: impl FnMut(usize) -> f64) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            *c *= factor(i);
        }
        out
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map_modes(|_| a)
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        assert!(self.same_grid(other), "grid mismatch in axpy");
        let mut out = self.clone();
        for (c, o) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *c += o * a;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// A random real field with modes `1..=band` (1-D), scaled to `‖w‖_{H²} = h2_norm`.
    pub fn random_band<R: Rng>(k_max: usize, band: usize, h2_norm: f64, rng: &mut R) -> Self {
        let mut field = Self::zeros(k_max, 1).expect("valid 1-D grid");
        for k in 1..=band.min(k_max) {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            field.set_mode(k as i64, c);
        }
        let norm = field.h2_norm();
        if norm > 0.0 {
            field.scaled(h2_norm / norm)
        } else {
            field
        }
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scaled(a)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

/// Map between "k + K" storage and "k mod N" FFT ordering along every axis.
/// `to_storage = false` maps a storage index to its FFT-buffer index.
fn remap_index(idx: usize, n: usize, dim: usize, k_max: usize, to_storage: bool) -> usize {
    let mut digits = [0usize; 3];
    let mut rem = idx;
    for axis in (0..dim).rev() {
        digits[axis] = rem % n;
        rem /= n;
    }
    let mut out = 0;
    for d in digits.iter().take(dim) {
        let mapped = if to_storage {
            (d + k_max) % n
        } else {
            (d + n - k_max) % n
        };
        out = out * n + mapped;
    }
    out
}

/// In-place n-D FFT along every axis (unnormalized).
fn fft_nd(buf: &mut [Complex64], n: usize, dim: usize, forward: bool) {
    let fft = plan(n, forward);
    let total = buf.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        for start in 0..total {
            // first element of each line along `axis`
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = buf[start + j * stride];
            }
            fft.process(&mut line);
            for (j, val) in line.iter().enumerate() {
                buf[start + j * stride] = *val;
            }
        }
    }
}

/// A Fourier multiplier with symbol `m(k) = shift − diffusion·|k|²`.
///
/// `diffusion = 1, shift = 0` is the Laplacian. A constant symbol (the
/// planar reduction) has `diffusion = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierOperator {
    pub diffusion: f64,
    pub shift: f64,
}

impl MultiplierOperator {
    pub fn laplacian() -> Self {
        Self {
            diffusion: 1.0,
            shift: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            diffusion: 0.0,
            shift: value,
        }
    }

    pub fn new(diffusion: f64, shift: f64) -> Self {
        Self { diffusion, shift }
    }

    /// `m(k)` as a function of `|k|²`.
    pub fn symbol(&self, k_sq: f64) -> f64 {
        self.shift - self.diffusion * k_sq
    }

    /// `sup_k m(k)`, the growth bound of the generated semigroup.
    pub fn growth_bound(&self) -> f64 {
        if self.diffusion >= 0.0 {
            self.shift
        } else {
            f64::INFINITY
        }
    }

    pub fn is_bounded_below(&self) -> bool {
        self.diffusion <= 0.0
    }

    pub fn apply(&self, field: &SpectralField) -> SpectralField {
        field.map_modes(|i| self.symbol(field.wavenumber_sq(i)))
    }

    /// Exact semigroup `e^{t m(k)}` mode by mode.
    pub fn semigroup(&self, t: f64, field: &SpectralField) -> Result<SpectralField> {
        if t < 0.0 && !self.is_bounded_below() {
            return Err(Error::Domain(format!(
                "backward time t = {t} for a symbol unbounded below"
            )));
        }
        Ok(field.map_modes(|i| (t * self.symbol(field.wavenumber_sq(i))).exp()))
    }
}

#[derive(Serialize, Deserialize)]
struct FieldRecord {
    grid_size: usize,
    domain_dim: usize,
    coeffs: Vec<f64>,
}

impl Serialize for SpectralField {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        FieldRecord {
            grid_size: self.grid_size(),
            domain_dim: self.dim,
            coeffs: self.coeffs.iter().flat_map(|c| [c.re, c.im]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpectralField {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = FieldRecord::deserialize(deserializer)?;
        if rec.grid_size % 2 == 0 || rec.grid_size < 3 {
            return Err(D::Error::custom("grid_size must be odd and at least 3"));
        }
        if rec.coeffs.len() % 2 != 0 {
            return Err(D::Error::custom("coefficients must come in (re, im) pairs"));
        }
        let coeffs = rec
            .coeffs
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        SpectralField::from_coeffs((rec.grid_size - 1) / 2, rec.domain_dim, coeffs)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const K: usize = 32;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cosine_samples_have_two_half_coefficients() {
        let field = SpectralField::from_fn_1d(K, f64::cos);
        assert!((field.coeff(1) - c(0.5, 0.0)).norm() < 1e-12);
        assert!((field.coeff(-1) - c(0.5, 0.0)).norm() < 1e-12);
        for k in -(K as i64)..=K as i64 {
            if k.abs() != 1 {
                assert!(field.coeff(k).norm() < 1e-12, "k = {k}");
            }
        }
    }

    #[test]
    fn sixty_four_uniform_cosine_samples() {
        let samples: Vec<f64> = (0..64)
            .map(|j| (2.0 * PI * j as f64 / 64.0).cos())
            .collect();
        let field = SpectralField::from_uniform_samples(&samples).unwrap();
        assert_eq!(field.k_max(), 31);
        assert!((field.coeff(1) - c(0.5, 0.0)).norm() < 1e-12);
        assert!((field.coeff(-1) - c(0.5, 0.0)).norm() < 1e-12);
        for k in 2..=31 {
            assert!(field.coeff(k).norm() < 1e-12 && field.coeff(-k).norm() < 1e-12);
        }
        // a fixed-K grid rejects a sample count that does not match 2K + 1
        assert!(matches!(
            SpectralField::from_samples(&samples, K, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_samples_give_zero_coefficients() {
        let field = SpectralField::from_samples(&vec![0.0; 2 * K + 1], K, 1).unwrap();
        assert!(field.coeffs().iter().all(|c| c.norm() == 0.0));
        assert!(field.to_physical().unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_plus_sin_two_x() {
        let field = SpectralField::from_fn_1d(K, |x| 1.0 + (2.0 * x).sin());
        assert!((field.coeff(0) - c(1.0, 0.0)).norm() < 1e-12);
        assert!((field.coeff(2) - c(0.0, -0.5)).norm() < 1e-12);
        assert!((field.coeff(-2) - c(0.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn half_coefficients_reconstruct_cosine() {
        let mut field = SpectralField::zeros(K, 1).unwrap();
        field.set_mode(1, c(0.5, 0.0));
        let samples = field.to_physical().unwrap();
        let n = 2 * K + 1;
        for (j, s) in samples.iter().enumerate() {
            let x = 2.0 * PI * j as f64 / n as f64;
            assert!((s - x.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn broken_hermitian_symmetry_is_rejected() {
        let mut field = SpectralField::zeros(K, 1).unwrap();
        field.coeffs_mut()[K + 3] = c(1.0, 0.0);
        assert!(matches!(
            field.to_physical(),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn sobolev_norms_of_cosine() {
        let field = SpectralField::cosine(K, 1, 1.0);
        assert!((field.sobolev_norm(0.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((field.sobolev_norm(2.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(SpectralField::zeros(K, 1).unwrap().sobolev_norm(3.5), 0.0);
    }

    #[test]
    fn laplacian_symbols() {
        let lap = MultiplierOperator::laplacian();
        let cos1 = SpectralField::cosine(K, 1, 1.0);
        assert!(lap.apply(&cos1).max_abs_diff(&cos1.scaled(-1.0)) < 1e-15);
        let one = SpectralField::constant(K, 1, 1.0).unwrap();
        assert_eq!(lap.apply(&one).h2_norm(), 0.0);
        let cos3 = SpectralField::cosine(K, 3, 1.0);
        assert!(lap.apply(&cos3).max_abs_diff(&cos3.scaled(-9.0)) < 1e-15);
    }

    #[test]
    fn heat_semigroup_values_and_law() {
        let lap = MultiplierOperator::laplacian();
        let cos1 = SpectralField::cosine(K, 1, 1.0);
        let out = lap.semigroup(1.0, &cos1).unwrap();
        assert!(out.max_abs_diff(&cos1.scaled((-1.0f64).exp())) < 1e-15);
        assert_eq!(lap.semigroup(0.0, &cos1).unwrap(), cos1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = SpectralField::random_band(K, 12, 1.0, &mut rng);
        let two_step = lap
            .semigroup(0.3, &lap.semigroup(0.7, &w).unwrap())
            .unwrap();
        let one_step = lap.semigroup(1.0, &w).unwrap();
        assert!(two_step.max_abs_diff(&one_step) < 1e-13);
        assert!(matches!(lap.semigroup(-0.1, &w), Err(Error::Domain(_))));
        // bounded symbols run backward
        assert!(MultiplierOperator::constant(-1.0)
            .semigroup(-0.5, &w)
            .is_ok());
    }

    #[test]
    fn dealias_two_thirds_rule() {
        let mut field = SpectralField::zeros(K, 1).unwrap();
        field.set_mode(30, c(1.0, 0.0));
        field.set_mode(5, c(0.2, 0.1));
        let d = field.dealiased();
        assert_eq!(d.coeff(30), c(0.0, 0.0));
        assert_eq!(d.coeff(5), c(0.2, 0.1));
        assert_eq!(d.dealias_cutoff(), 21);
        let mut band = SpectralField::zeros(K, 1).unwrap();
        band.set_mode(21, c(0.3, -0.2));
        assert_eq!(band.dealiased(), band);
        assert_eq!(d.dealiased(), d);
    }

    #[test]
    fn parseval_matches_grid_mean_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = SpectralField::random_band(K, 20, 2.0, &mut rng);
        let samples = w.to_physical().unwrap();
        let grid_l2 = (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt();
        assert!((grid_l2 - w.sobolev_norm(0.0)).abs() < 1e-10);
    }

    #[test]
    fn two_dimensional_round_trip() {
        let k = 6;
        let n = 2 * k + 1;
        let mut samples = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let x = 2.0 * PI * i as f64 / n as f64;
                let y = 2.0 * PI * j as f64 / n as f64;
                samples.push((x + 2.0 * y).cos() + 0.3 * (2.0 * x).sin());
            }
        }
        let field = SpectralField::from_samples(&samples, k, 2).unwrap();
        let back = field.to_physical().unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        // cos(x + 2y) has |k|² = 5 and coefficient 1/2 at (1, 2)
        let idx = (1 + k) * n + (2 + k);
        assert_eq!(field.wavevector(idx), [1, 2, 0]);
        assert!((field.coeffs()[idx] - c(0.5, 0.0)).norm() < 1e-12);
        assert_eq!(field.wavenumber_sq(idx), 5.0);
    }

    #[test]
    fn serde_record_is_flat_and_round_trips() {
        let field = SpectralField::cosine(2, 1, 1.0);
        let json = serde_json::to_value(&field).unwrap();
        assert_eq!(json["grid_size"], 5);
        assert_eq!(json["domain_dim"], 1);
        assert_eq!(json["coeffs"].as_array().unwrap().len(), 10);
        assert_eq!(json["coeffs"][2], 0.5); // k = -1, real part
        let back: SpectralField = serde_json::from_value(json).unwrap();
        assert_eq!(back, field);
    }

    proptest! {
        #[test]
        fn round_trip_band_limited(seed in 0u64..1000, band in 1usize..=32, norm in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = SpectralField::random_band(K, band, norm, &mut rng);
            let samples = w.to_physical().unwrap();
            let back = SpectralField::from_samples(&samples, K, 1).unwrap();
            let back_samples = back.to_physical().unwrap();
            let err = samples.iter().zip(&back_samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn heat_flow_never_increases_sobolev_norms(seed in 0u64..1000, t in 0.0f64..5.0, s in 0.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = SpectralField::random_band(K, 16, 1.0, &mut rng);
            let out = MultiplierOperator::laplacian().semigroup(t, &w).unwrap();
            prop_assert!(out.sobolev_norm(s) <= w.sobolev_norm(s) * (1.0 + 1e-15));
        }

        #[test]
        fn multipliers_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1 = SpectralField::random_band(K, 10, 1.0, &mut rng);
            let w2 = SpectralField::random_band(K, 10, 1.0, &mut rng);
            let op = MultiplierOperator::new(1.0, -0.5);
            let combo = w1.axpy(a, &w2);
            let lhs = op.apply(&combo);
            let rhs = op.apply(&w1).axpy(a, &op.apply(&w2));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            let lhs = op.semigroup(t, &combo).unwrap();
            let rhs = op.semigroup(t, &w1).unwrap().axpy(a, &op.semigroup(t, &w2).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
