//! Reference values frozen from earlier runs. Set `UPDATE_GOLDEN=1` to
//! rewrite the files under `tests/golden/`.

use std::path::PathBuf;

use frsm_core::integrator::integrate_full_sampled;
use frsm_core::splitting::{contraction_constant, ContractionParams};
use frsm_core::system::{estimate_lipschitz, estimate_lipschitz_with, LipschitzSampling};
use frsm_core::{
    h0_closed_form, LpConfig, RunPlan, SlowManifoldSolver, SpectralField, SplittingSpec, SystemSpec,
};
use serde_json::{json, Value};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"))
}

/// Compare `value` against the frozen record within `rel_tol·|value| + abs_tol`,
/// or rewrite it.
fn check_golden(name: &str, value: &Value, rel_tol: f64, abs_tol: f64) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display()));
    let frozen: Value = serde_json::from_str(&text).unwrap();
    let (Value::Object(now), Value::Object(then)) = (value, &frozen) else {
        panic!("golden records are objects");
    };
    assert_eq!(now.len(), then.len(), "{name}: field sets differ");
    for (key, v) in now {
        let (a, b) = (v.as_f64().unwrap(), then[key].as_f64().unwrap());
        let scale = a.abs().max(b.abs());
        assert!(
            (a - b).abs() <= rel_tol * scale + abs_tol,
            "{name}.{key}: {a:e} vs frozen {b:e}"
        );
    }
}

fn defaults() -> (SystemSpec, frsm_core::ModifiedSystem, SplittingSpec) {
    let spec = SystemSpec::benchmark(1e-3).unwrap();
    let modified = spec.modified_at_origin().unwrap();
    let split =
        SplittingSpec::new(0.1, spec.epsilon, spec.constants.omega_a, modified.lambda0).unwrap();
    (spec, modified, split)
}

fn f_tilde_lipschitz(spec: &SystemSpec, modified: &frsm_core::ModifiedSystem) -> f64 {
    let sampling = LipschitzSampling {
        out_index: 2.0 * spec.gamma,
        ..LipschitzSampling::new(spec.k_max, spec.sigma.unwrap(), 200, 0)
    };
    estimate_lipschitz_with(&sampling, |u, v| modified.f_tilde(u, v)).unwrap()
}

#[test]
fn shifted_reaction_lipschitz_below_inverse_semigroup_bound() {
    let (spec, modified, _) = defaults();
    let l = f_tilde_lipschitz(&spec, &modified);
    assert!(l < 1.0 / spec.constants.c_a, "{l}");
    check_golden(
        "f_tilde_lipschitz",
        &json!({ "radius": 0.25, "l_f_tilde": l }),
        1e-9,
        0.0,
    );
}

#[test]
fn contraction_constant_at_defaults() {
    let (spec, modified, split) = defaults();
    let c = &spec.constants;
    let params = ContractionParams {
        l_ftilde: f_tilde_lipschitz(&spec, &modified),
        c_a: c.c_a,
        l_g: 0.0,
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
    assert!(spec.g.rule.terms.is_empty());
    let report = contraction_constant(&params).unwrap();
    assert!(report.l < 1.0, "{}", report.l);
    check_golden(
        "contraction_defaults",
        &json!({ "k0": split.k0 as f64, "gap": split.gap(), "L": report.l }),
        1e-9,
        0.0,
    );
}

#[test]
fn reaction_stays_order_epsilon_on_manifold() {
    let v0 = SpectralField::cosine(32, 1, 0.15);
    let mut ratios = Vec::new();
    for eps in [1e-2, 10f64.powf(-2.5), 1e-3] {
        let spec = SystemSpec::benchmark(eps).unwrap();
        let u0 = h0_closed_form(&v0).unwrap();
        let dt = (eps / 5.0).min(1e-3);
        let traj =
            integrate_full_sampled(&spec, &u0, &v0, RunPlan::new(1.0, dt).recording(20)).unwrap();
        let worst = traj
            .states
            .iter()
            .map(|s| spec.eval_f(&s.u, &s.v).unwrap().h2_norm())
            .fold(0.0, f64::max);
        ratios.push(worst / eps);
    }
    // the constant is frozen at ε = 10⁻³; larger ε must not exceed it by much
    let c = ratios[2];
    for r in &ratios {
        assert!(*r <= 1.5 * c, "{ratios:?}");
    }
    check_golden("reaction_order_epsilon", &json!({ "C": c }), 1e-6, 0.0);
}

#[test]
fn benchmark_invariance_residual() {
    let (spec, modified, split) = defaults();
    let tol = 1e-10;
    let solver =
        SlowManifoldSolver::new(&spec, &modified, &split, LpConfig::with_tol(tol)).unwrap();
    let point = solver.solve(&SpectralField::cosine(32, 1, 0.05)).unwrap();
    let report = solver.invariance_residual(&point, 0.05, 1e-5, 500).unwrap();
    assert!(report.max_residual <= 10.0 * tol, "{}", report.max_residual);
    assert!(report.within_contract());
    check_golden(
        "benchmark_invariance",
        &json!({ "max_residual": report.max_residual }),
        0.0,
        tol,
    );
}

#[test]
fn plain_reaction_lipschitz_is_not_below_one() {
    // the linear part of f alone contributes 1, which is why the contraction
    // uses the shifted reaction
    let spec = SystemSpec::benchmark(1e-3).unwrap();
    let l = estimate_lipschitz(&spec.f, 32, 0.25, 200, 0, spec.gamma).unwrap();
    assert!(l >= 1.0 - 1e-6, "{l}");
}
