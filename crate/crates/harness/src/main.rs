// NaN must fail range checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use frsm::experiments::{
    run_attraction, run_check, run_convergence, run_distance, run_reduced_flow, DistanceSweep,
};
use frsm::{emit_report, ExperimentConfig, RateReport, RegimeViolation};
use frsm_core::integrator::{integrate_full_sampled, step_count, IntegrationFailure};
use frsm_core::lyapunov_perron::{LpConfig, SlowManifoldSolver};
use frsm_core::splitting::SplittingSpec;
use frsm_core::{h0_closed_form, CriticalGraph, RunPlan};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "frsm",
    version,
    about = "Fast-reaction slow-manifold experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); each subcommand has its own defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives byte-identical reports.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Refuse parameter points outside the admissible regime.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full system and record norms along the run.
    Simulate,
    /// Solve for the critical graph at the configured v0.
    Critical,
    /// Compute one slow-manifold point.
    SlowManifold,
    /// Attraction to the slow manifold.
    Attract,
    /// Convergence to the limit problem as epsilon decreases.
    Converge,
    /// Distance between slow and critical manifolds.
    Distance {
        #[arg(long, value_enum, default_value_t = SweepArg::Both)]
        sweep: SweepArg,
    },
    /// Reduced slow flow against the full limit flow.
    Reduced,
    /// Regime diagnostics for every (epsilon, zeta) pair.
    Check,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    Epsilon,
    Zeta,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<RegimeViolation>().is_some() {
        return 2;
    }
    for cause in e.chain() {
        if cause.is::<IntegrationFailure>() {
            return 3;
        }
        if let Some(core) = cause.downcast_ref::<frsm_core::Error>() {
            return if matches!(core, frsm_core::Error::Config(_)) {
                1
            } else {
                3
            };
        }
    }
    1
}

fn config(cli: &Cli, default: fn() -> ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.strict |= cli.strict;
    cfg.validate()?;
    Ok(cfg)
}

fn workers(cli: &Cli) -> usize {
    cli.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn emit(report: &RateReport, out: &Path, name: &str) -> anyhow::Result<u8> {
    let path = out.join(format!("{name}.csv"));
    emit_report(report, &path)?;
    let fit = match report.fit {
        Some(f) => format!("slope {:.4}, R² {:.4}", f.slope, f.r_squared),
        None => "no fit".to_string(),
    };
    println!(
        "{name}: {} points, {fit} -> {}",
        report.points.len(),
        path.display()
    );
    if !report.flags.is_empty() {
        println!("  flags: {}", report.flags.join(", "));
    }
    Ok(if report.any_failed() && report.fit.is_none() {
        3
    } else {
        0
    })
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{name} -> {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let w = workers(cli);
    match &cli.command {
        Command::Converge => emit(
            &run_convergence(&config(cli, ExperimentConfig::convergence)?, w)?,
            &cli.out,
            "convergence",
        ),
        Command::Attract => emit(
            &run_attraction(&config(cli, ExperimentConfig::attraction)?, w)?,
            &cli.out,
            "attraction",
        ),
        Command::Reduced => emit(
            &run_reduced_flow(&config(cli, ExperimentConfig::reduced_flow)?, w)?,
            &cli.out,
            "reduced_flow",
        ),
        Command::Distance { sweep } => {
            let mut code = 0;
            if matches!(sweep, SweepArg::Epsilon | SweepArg::Both) {
                let cfg = config(cli, ExperimentConfig::distance_epsilon)?;
                code = code.max(emit(
                    &run_distance(&cfg, DistanceSweep::Epsilon, w)?,
                    &cli.out,
                    "distance_epsilon",
                )?);
            }
            if matches!(sweep, SweepArg::Zeta | SweepArg::Both) {
                let cfg = config(cli, ExperimentConfig::distance_zeta)?;
                code = code.max(emit(
                    &run_distance(&cfg, DistanceSweep::Zeta, w)?,
                    &cli.out,
                    "distance_zeta",
                )?);
            }
            Ok(code)
        }
        Command::Check => {
            let cfg = config(cli, ExperimentConfig::default)?;
            let rows = run_check(&cfg, w)?;
            fs::create_dir_all(&cli.out)
                .with_context(|| format!("creating {}", cli.out.display()))?;
            let path = cli.out.join("check.csv");
            let mut csv = csv::Writer::from_path(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            csv.write_record([
                "epsilon", "zeta", "lambda0", "k0", "gap", "L", "L_zeta", "passes", "error",
            ])?;
            for r in &rows {
                let d = r.diagnostics.as_ref();
                csv.write_record([
                    format!("{:e}", r.epsilon),
                    d.map(|d| format!("{:e}", d.zeta)).unwrap_or_default(),
                    format!("{:e}", r.lambda0),
                    d.map(|d| d.k0.to_string()).unwrap_or_default(),
                    d.map(|d| format!("{:e}", d.gap)).unwrap_or_default(),
                    d.and_then(|d| d.l)
                        .map(|l| format!("{l:e}"))
                        .unwrap_or_default(),
                    d.and_then(|d| d.l_zeta)
                        .map(|l| format!("{l:e}"))
                        .unwrap_or_default(),
                    r.passes().to_string(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            csv.flush()?;
            write_json(&cli.out, "check", &json!({ "config": cfg, "rows": rows }))?;
            let failing = rows.iter().filter(|r| !r.passes()).count();
            println!(
                "check: {} pairs, {failing} outside the regime -> {}",
                rows.len(),
                path.display()
            );
            if cfg.strict && failing > 0 {
                return Err(RegimeViolation(format!(
                    "{failing} of {} pairs fail the regime checks",
                    rows.len()
                ))
                .into());
            }
            Ok(0)
        }
        Command::Simulate => {
            let cfg = config(cli, || ExperimentConfig {
                epsilon: vec![1e-2],
                horizon: 0.5,
                ..ExperimentConfig::default()
            })?;
            let eps = cfg.first_epsilon()?;
            let spec = cfg.spec(eps)?;
            let graph = CriticalGraph::newton(cfg.tolerances.newton);
            let v0 = cfg.initial_v();
            let mut u0 = graph.solve(&spec, &v0)?;
            if !cfg.on_manifold {
                u0 = u0.axpy(
                    1.0,
                    &frsm_core::SpectralField::cosine(cfg.k_max, cfg.offset_mode, cfg.offset),
                );
            }
            let dt = cfg.step_for(eps);
            let (steps, _) = step_count(cfg.horizon, dt)?;
            let plan = RunPlan::new(cfg.horizon, dt).recording((steps / cfg.samples.max(1)).max(1));
            let traj = integrate_full_sampled(&spec, &u0, &v0, plan)?;
            let rows = traj.diagnostics(&spec, &graph)?;
            fs::create_dir_all(&cli.out)
                .with_context(|| format!("creating {}", cli.out.display()))?;
            let path = cli.out.join("simulate.csv");
            let mut csv = csv::Writer::from_path(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            csv.write_record(["t", "u_h2", "v_h2", "critical_residual", "dist_critical"])?;
            for r in &rows {
                csv.write_record(
                    [r.t, r.u_h2, r.v_h2, r.residual, r.dist_critical].map(|x| format!("{x:e}")),
                )?;
            }
            csv.flush()?;
            write_json(
                &cli.out,
                "simulate",
                &json!({
                    "config": cfg,
                    "epsilon": eps,
                    "step": traj.step_dt,
                    "scheme_order": traj.scheme_order,
                    "cutoff_activated": traj.cutoff_activated,
                    "records": rows.len(),
                }),
            )?;
            Ok(0)
        }
        Command::Critical => {
            let cfg = config(cli, ExperimentConfig::default)?;
            let spec = cfg.spec(cfg.first_epsilon()?)?;
            let graph = CriticalGraph::newton(cfg.tolerances.newton);
            let v0 = cfg.initial_v();
            let h = graph.solve(&spec, &v0)?;
            let residual = frsm_core::critical::critical_residual(&spec, &h, &v0)?;
            let closed = if spec.name == "benchmark" {
                Some(h.axpy(-1.0, &h0_closed_form(&v0)?).h2_norm())
            } else {
                None
            };
            let lh = frsm_core::critical::estimate_lh(
                &graph,
                &spec,
                cfg.lipschitz_radius(&spec),
                cfg.lipschitz_samples,
                cfg.seed,
            )?;
            write_json(
                &cli.out,
                "critical",
                &json!({
                    "config": cfg,
                    "v0": v0,
                    "h0": h,
                    "residual": residual,
                    "closed_form_difference": closed,
                    "lipschitz_estimate": lh,
                }),
            )?;
            Ok(0)
        }
        Command::SlowManifold => {
            let cfg = config(cli, ExperimentConfig::attraction)?;
            let eps = cfg.first_epsilon()?;
            let spec = cfg.spec(eps)?;
            let modified = spec.modified_at_origin()?;
            let split = SplittingSpec::new(
                cfg.first_zeta()?,
                eps,
                spec.constants.omega_a,
                modified.lambda0,
            )?;
            let regime = frsm::experiments::regime_diagnostics(
                &spec,
                &modified,
                &split,
                cfg.lipschitz_radius(&spec),
                cfg.lipschitz_samples,
                cfg.seed,
            )?;
            if cfg.strict && !regime.regime_flags.all_pass() {
                return Err(RegimeViolation(format!("{:?}", regime.regime_flags)).into());
            }
            let lp = LpConfig {
                tol: cfg.tolerances.fixed_point,
                graph: CriticalGraph::newton(cfg.tolerances.newton),
                ..LpConfig::default()
            };
            let solver = SlowManifoldSolver::new(&spec, &modified, &split, lp)?;
            let point = solver.solve(&split.project_slow(&cfg.initial_v()))?;
            let (du, dv) = solver.manifold_distance(&point)?;
            write_json(
                &cli.out,
                "slow_manifold",
                &json!({
                    "config": cfg,
                    "point": point,
                    "dist_u": du,
                    "dist_vF": dv,
                    "eta": solver.eta(),
                    "regime_diagnostics": regime,
                }),
            )?;
            Ok(0)
        }
    }
}
