//! Experiment configuration and initial-data recipes.

use std::path::Path;

use anyhow::{bail, Context};
use frsm_core::{SpectralField, SystemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V0Kind {
    SingleMode,
    RandomBand,
}

/// Named generator for the slow initial datum.
///
/// `single_mode` is `amplitude·cos(mode·x)`; `random_band` draws modes
/// `1..=mode` and scales to `H²` norm `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct V0Recipe {
    pub kind: V0Kind,
    pub amplitude: f64,
    pub mode: usize,
    /// Falls back to the experiment seed.
    pub seed: Option<u64>,
}

impl Default for V0Recipe {
    fn default() -> Self {
        Self {
            kind: V0Kind::SingleMode,
            amplitude: 0.15,
            mode: 1,
            seed: None,
        }
    }
}

impl V0Recipe {
    pub fn build(&self, k_max: usize, fallback_seed: u64) -> SpectralField {
        match self.kind {
            V0Kind::SingleMode => SpectralField::cosine(k_max, self.mode, self.amplitude),
            V0Kind::RandomBand => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(fallback_seed));
                SpectralField::random_band(k_max, self.mode.max(1), self.amplitude, &mut rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub newton: f64,
    pub fixed_point: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: 1e-12,
            fixed_point: 1e-10,
        }
    }
}

/// One experiment's parameters. Fields that an experiment does not use are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub epsilon: Vec<f64>,
    pub zeta: Vec<f64>,
    pub t_eval: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Time step of the full system; `min(10⁻³, ε/5)` when absent.
    pub dt: Option<f64>,
    pub v0: V0Recipe,
    pub tolerances: Tolerances,
    /// Start `u₀ = h⁰(v₀)` in the convergence run.
    pub on_manifold: bool,
    /// Amplitude of the `cos(mode·x)` displacement of `u₀` off the slow manifold.
    pub offset: f64,
    pub offset_mode: usize,
    /// Number of recorded times in the attraction run.
    pub samples: usize,
    /// Amplitude of the `cos((k₀+1)x)` component added to `v₀` in the reduced-flow run.
    pub fast_tail: f64,
    /// Pairs sampled for empirical Lipschitz constants.
    pub lipschitz_samples: usize,
    /// `H²` radius of the sampling ball; the cutoff radius `σ` (or 1 without
    /// a cutoff) when absent.
    pub lipschitz_radius: Option<f64>,
    pub seed: u64,
    pub strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: "benchmark".into(),
            k_max: frsm_core::system::DEFAULT_K,
            epsilon: geometric(-1.0, -3.5, 6),
            zeta: vec![0.1],
            t_eval: 1.0,
            horizon: 1.0,
            dt: None,
            v0: V0Recipe::default(),
            tolerances: Tolerances::default(),
            on_manifold: true,
            offset: 0.05,
            offset_mode: 1,
            samples: 40,
            fast_tail: std::f64::consts::SQRT_2,
            lipschitz_samples: 200,
            lipschitz_radius: None,
            seed: 0,
            strict: false,
        }
    }
}

/// `n` points `10^a, …, 10^b` evenly spaced in the exponent.
pub fn geometric(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(a)];
    }
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Convergence run: on-manifold starts, `t = 1`, `ε = 10^{-1} … 10^{-3.5}`.
    pub fn convergence() -> Self {
        Self::default()
    }

    /// Distance sweep in `ε` at fixed `ζ`.
    pub fn distance_epsilon() -> Self {
        Self {
            epsilon: geometric(-1.0, -3.0, 5),
            zeta: vec![0.5],
            ..Self::default()
        }
    }

    /// Distance sweep in `ζ` at fixed `ε = 10⁻⁴`.
    pub fn distance_zeta() -> Self {
        Self {
            epsilon: vec![1e-4],
            zeta: geometric(-0.5, -2.5, 5),
            ..Self::default()
        }
    }

    pub fn attraction() -> Self {
        Self {
            epsilon: vec![1e-3],
            zeta: vec![0.1],
            horizon: 0.02,
            dt: Some(1e-5),
            ..Self::default()
        }
    }

    pub fn reduced_flow() -> Self {
        Self {
            epsilon: vec![1e-3],
            zeta: geometric(-0.5, -2.5, 5),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        SystemSpec::by_name(&self.system, 0.1)
            .with_context(|| format!("system '{}'", self.system))?;
        if self.k_max < 2 {
            bail!("K must be at least 2");
        }
        if self.epsilon.iter().any(|&e| !(e > 0.0)) {
            bail!("epsilon values must be positive");
        }
        if self.epsilon.windows(2).any(|w| !(w[1] < w[0])) {
            bail!("epsilon list must be strictly decreasing");
        }
        if self.zeta.iter().any(|&z| !(z > 0.0)) {
            bail!("zeta values must be positive");
        }
        for (name, x) in [("t_eval", self.t_eval), ("T", self.horizon)] {
            if !(x > 0.0) {
                bail!("{name} must be positive");
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                bail!("dt must be positive");
            }
        }
        if !(self.tolerances.newton > 0.0) || !(self.tolerances.fixed_point > 0.0) {
            bail!("tolerances must be positive");
        }
        if self.lipschitz_radius.is_some_and(|r| !(r > 0.0)) {
            bail!("lipschitz_radius must be positive");
        }
        if self.v0.mode > self.k_max {
            bail!("v0 mode {} exceeds K = {}", self.v0.mode, self.k_max);
        }
        Ok(())
    }

    pub fn spec(&self, epsilon: f64) -> anyhow::Result<SystemSpec> {
        Ok(SystemSpec::by_name(&self.system, epsilon)?.with_k_max(self.k_max)?)
    }

    pub fn initial_v(&self) -> SpectralField {
        self.v0.build(self.k_max, self.seed)
    }

    /// First `ε` of the list, for experiments that use a single value.
    pub fn first_epsilon(&self) -> anyhow::Result<f64> {
        self.epsilon
            .first()
            .copied()
            .context("epsilon list is empty")
    }

    /// First `ζ` of the list, for experiments that use a single value.
    pub fn first_zeta(&self) -> anyhow::Result<f64> {
        self.zeta.first().copied().context("zeta list is empty")
    }

    pub fn lipschitz_radius(&self, spec: &SystemSpec) -> f64 {
        self.lipschitz_radius.or(spec.sigma).unwrap_or(1.0)
    }

    pub fn step_for(&self, epsilon: f64) -> f64 {
        self.dt
            .unwrap_or_else(|| frsm_core::integrator::default_dt(epsilon))
    }
}
