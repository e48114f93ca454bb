//! Sweep reports and their CSV/JSON serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use frsm_core::SplittingDiagnostics;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::fit::RateFit;

/// Flag set on points whose computation failed.
pub const FAILED: &str = "failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    pub error: f64,
    /// Per-point diagnostics, same names in every point of a report.
    pub extras: Vec<(String, f64)>,
    pub regime: Option<SplittingDiagnostics>,
    pub flags: Vec<String>,
}

impl SweepPoint {
    pub fn new(parameter: f64, error: f64) -> Self {
        Self {
            parameter,
            error,
            extras: Vec::new(),
            regime: None,
            flags: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.extras.push((name.to_string(), value));
        self
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn regime_ok(&self) -> bool {
        self.regime
            .as_ref()
            .is_none_or(|r| r.regime_flags.all_pass())
    }

    pub fn failed(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with(FAILED))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub experiment: String,
    /// Name of the swept parameter.
    pub parameter: String,
    /// Abscissa used by the fit, when it differs from `parameter`.
    pub fit_parameter: String,
    pub points: Vec<SweepPoint>,
    pub fit: Option<RateFit>,
    pub summary: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub config: ExperimentConfig,
}

impl RateReport {
    pub fn new(experiment: &str, parameter: &str, config: &ExperimentConfig) -> Self {
        Self {
            experiment: experiment.into(),
            parameter: parameter.into(),
            fit_parameter: parameter.into(),
            points: Vec::new(),
            fit: None,
            summary: BTreeMap::new(),
            flags: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn fitted_slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    pub fn fitted_intercept(&self) -> Option<f64> {
        self.fit.map(|f| f.intercept)
    }

    pub fn r_squared(&self) -> Option<f64> {
        self.fit.map(|f| f.r_squared)
    }

    pub fn regime_diagnostics(&self) -> Vec<&SplittingDiagnostics> {
        self.points
            .iter()
            .filter_map(|p| p.regime.as_ref())
            .collect()
    }

    pub fn any_failed(&self) -> bool {
        self.points.iter().any(SweepPoint::failed)
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }
}

fn number(x: f64) -> String {
    format!("{x:e}")
}

/// Write `path` as CSV and `path` with a `.json` extension as the sidecar.
/// Returns the sidecar path.
pub fn emit_report(report: &RateReport, path: &Path) -> anyhow::Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let extra_names: Vec<String> = report
        .points
        .first()
        .map(|p| p.extras.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut header = vec![report.parameter.clone(), "error".to_string()];
    header.extend(extra_names.iter().cloned());
    header.extend(["k0", "gap", "L", "regime_ok", "flags"].map(String::from));
    w.write_record(&header)
        .with_context(|| format!("writing {}", path.display()))?;
    for p in &report.points {
        let mut row = vec![number(p.parameter), number(p.error)];
        for name in &extra_names {
            row.push(p.extra(name).map(number).unwrap_or_default());
        }
        match &p.regime {
            Some(r) => {
                row.push(r.k0.to_string());
                row.push(number(r.gap));
                row.push(r.l.map(number).unwrap_or_default());
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.push(p.regime_ok().to_string());
        row.push(p.flags.join(";"));
        w.write_record(&row)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;

    let sidecar = path.with_extension("json");
    let doc = json!({
        "experiment": report.experiment,
        "parameter": report.parameter,
        "fit_parameter": report.fit_parameter,
        "points": report.points.len(),
        "fitted_slope": report.fitted_slope(),
        "fitted_intercept": report.fitted_intercept(),
        "r_squared": report.r_squared(),
        "fit": report.fit,
        "summary": report.summary,
        "flags": report.flags,
        "regime_diagnostics": report.regime_diagnostics(),
        "config": report.config,
        "seed": report.config.seed,
        "versions": { "frsm": env!("CARGO_PKG_VERSION") },
    });
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(&sidecar, text + "\n").with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let report = RateReport::new("distance", "zeta", &ExperimentConfig::default());
        let sidecar = emit_report(&report, &path).unwrap();
        let csv = fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("zeta,error,"));
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(doc["points"], 0);
        assert!(doc["fitted_slope"].is_null());
    }

    #[test]
    fn rows_and_slope() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/e2.csv");
        let mut report = RateReport::new("distance", "epsilon", &ExperimentConfig::default());
        for i in 0..5 {
            let e = 10f64.powi(-i);
            report.points.push(
                SweepPoint::new(e, 2.0 * e)
                    .with("dist_u", e)
                    .with("dist_vF", e),
            );
        }
        let pts: Vec<(f64, f64)> = report
            .points
            .iter()
            .map(|p| (p.parameter, p.error))
            .collect();
        report.fit = Some(crate::fit::fit_rate(&pts).unwrap());
        let sidecar = emit_report(&report, &path).unwrap();
        let csv = fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv
            .lines()
            .next()
            .unwrap()
            .starts_with("epsilon,error,dist_u,dist_vF,"));
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert!((doc["fitted_slope"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(doc["points"], 5);
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let report = RateReport::new("x", "epsilon", &ExperimentConfig::default());
        let err = emit_report(&report, &blocker.join("out.csv")).unwrap_err();
        assert!(format!("{err:#}").contains("file"));
    }
}
