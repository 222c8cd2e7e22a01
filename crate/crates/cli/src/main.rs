//! Command-line front end: every pipeline stage behind one binary, reading
//! shared TOML configs and emitting CSV/JSON data plus standalone SVG
//! plots. Exit codes: 0 success, 1 validation-suite failure, 2 config
//! error, 3 numeric failure.

mod svg;
mod validate;

use clap::{Parser, Subcommand};
use macrodyn::analysis::{self, FitVariable, PhaseAxis, PhaseParam};
use macrodyn::config::RunConfig;
use macrodyn::fastslow;
use macrodyn::io as mio;
use macrodyn::macro_ode;
use macrodyn::rk45::Termination;
use macrodyn::width_sim;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "macrodyn", version, about = "fast-slow training dynamics laboratory")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed override for simulation commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 1 forces fully deterministic ordering.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the macroscopic dynamics and emit the trajectory.
    SimulateOde {
        #[arg(long)]
        tau_max: Option<f64>,
        /// Add the critical-manifold branch to the phase-plane plot.
        #[arg(long)]
        overlay_manifold: bool,
    },
    /// Train a real finite-width network with online SGD.
    SimulateSgd {
        /// Number of runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Also integrate the infinite-width dynamics on the same horizon.
        #[arg(long)]
        overlay_ode: bool,
    },
    /// Critical-manifold roots, branch table and classification.
    Manifold,
    /// Numeric-vs-analytic verdict sweep over a parameter grid.
    PhaseMap {
        /// Axis syntax: `<param>:<lo>:<hi>:<n>` with param `cstar<k>` or
        /// `a_init`.
        #[arg(long, default_value = "cstar2:-3:3:16")]
        axis1: String,
        #[arg(long, default_value = "a_init:0.5:12:16")]
        axis2: String,
        #[arg(long)]
        tau_max: Option<f64>,
    },
    /// Long-horizon tail exponents and the R*a limit.
    Scaling {
        #[arg(long)]
        tau_max: Option<f64>,
        #[arg(long, default_value_t = 2)]
        decades: u32,
    },
    /// Run the numerical property suite and print a pass/fail table.
    Validate,
    /// Teacher-coefficient gallery: one trajectory per (c*_2, c*_3) pair.
    #[command(alias = "sweep-appendix-g")]
    CoeffSweep {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = vec![-5.0, -1.67, 1.67, 5.0])]
        c2: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = vec![-5.0, -1.67, 1.67, 5.0])]
        c3: Vec<f64>,
        #[arg(long)]
        tau_max: Option<f64>,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
    Validation,
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Validation => ExitCode::from(1),
            Failure::Config(_) => ExitCode::from(2),
            Failure::Numeric(_) => ExitCode::from(3),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(msg) => eprintln!("config error: {msg}"),
                Failure::Numeric(msg) => eprintln!("numeric failure: {msg}"),
                Failure::Validation => {}
            }
            f.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    RunConfig::from_path(path).map_err(|e| Failure::Config(e.to_string()))
}

fn write_echo(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    mio::write_text(&out.join("resolved-config.toml"), &cfg.resolved_toml())
        .map_err(|e| Failure::Config(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| Failure::Config(e.to_string()))?;
    write_echo(&cfg, out)?;
    match &cli.command {
        Command::SimulateOde {
            tau_max,
            overlay_manifold,
        } => cmd_simulate_ode(cli, &cfg, tau_max.unwrap_or(cfg.ode.tau_max), *overlay_manifold),
        Command::SimulateSgd {
            replicates,
            overlay_ode,
        } => cmd_simulate_sgd(cli, &cfg, *replicates, *overlay_ode),
        Command::Manifold => cmd_manifold(cli, &cfg),
        Command::PhaseMap {
            axis1,
            axis2,
            tau_max,
        } => cmd_phase_map(cli, &cfg, axis1, axis2, tau_max.unwrap_or(1e5)),
        Command::Scaling { tau_max, decades } => {
            cmd_scaling(cli, &cfg, tau_max.unwrap_or(cfg.ode.tau_max), *decades)
        }
        Command::Validate => validate::cmd_validate(&cfg).map_err(|()| Failure::Validation),
        Command::CoeffSweep { c2, c3, tau_max } => {
            cmd_coeff_sweep(cli, &cfg, c2, c3, tau_max.unwrap_or(1e4))
        }
    }
}

fn cmd_simulate_ode(
    cli: &Cli,
    cfg: &RunConfig,
    tau_max: f64,
    overlay_manifold: bool,
) -> Result<(), Failure> {
    let opts = cfg.ode.integrate_options();
    let traj = macro_ode::integrate(&cfg.spec, tau_max, &opts)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let out = &cli.out;
    mio::write_text(&out.join("trajectory.csv"), &mio::trajectory_csv(&traj, true))
        .map_err(|e| Failure::Config(e.to_string()))?;
    mio::write_json(
        &out.join("trajectory.json"),
        &mio::trajectory_envelope(&traj, "trajectory.csv"),
    )
    .map_err(|e| Failure::Config(e.to_string()))?;
    if cli.svg {
        let chart = svg::LineChart {
            title: format!("macroscopic dynamics to tau = {tau_max:.3e}"),
            x_label: "tau".into(),
            y_label: "value".into(),
            x_log: true,
            y_log: false,
            series: vec![
                svg::Series {
                    label: "R".into(),
                    points: traj.tau.iter().cloned().zip(traj.r.iter().cloned()).collect(),
                },
                svg::Series {
                    label: "a".into(),
                    points: traj.tau.iter().cloned().zip(traj.a.iter().cloned()).collect(),
                },
            ],
        };
        mio::write_text(&out.join("trajectory.svg"), &chart.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
        let mut series = vec![svg::Series {
            label: "trajectory".into(),
            points: traj.r.iter().cloned().zip(traj.a.iter().cloned()).collect(),
        }];
        if overlay_manifold {
            if let Ok(m) = fastslow::manifold_analysis(&cfg.spec) {
                series.push(svg::Series {
                    label: "branch a = h(R)".into(),
                    points: m
                        .branch
                        .r
                        .iter()
                        .cloned()
                        .zip(m.branch.h.iter().cloned())
                        .filter(|&(_, h)| h < 5.0 * cfg.spec.a_init())
                        .collect(),
                });
            }
        }
        let chart = svg::LineChart {
            title: "phase plane".into(),
            x_label: "R".into(),
            y_label: "a".into(),
            x_log: false,
            y_log: false,
            series,
        };
        mio::write_text(&out.join("phase_plane.svg"), &chart.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Termination::StepSizeUnderflow { t } = traj.meta.termination {
        return Err(Failure::Numeric(format!("step size underflow at tau = {t}")));
    }
    println!(
        "simulate-ode: {} samples to tau = {:.3e} ({:?})",
        traj.len(),
        traj.tau_end(),
        traj.meta.termination
    );
    Ok(())
}

fn cmd_simulate_sgd(
    cli: &Cli,
    cfg: &RunConfig,
    replicates: usize,
    overlay_ode: bool,
) -> Result<(), Failure> {
    let sgd = cfg
        .sgd
        .as_ref()
        .ok_or_else(|| Failure::Config("[sgd] section required for simulate-sgd".into()))?;
    let scfg = sgd.sgd_config(&cfg.spec);
    scfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let base_seed = cli.seed.unwrap_or(sgd.seed);
    let out = &cli.out;
    let mut all_runs = vec![];
    for k in 0..replicates.max(1) {
        let seed = base_seed + k as u64;
        let run = width_sim::run_sgd(&scfg, seed).map_err(|e| Failure::Numeric(e.to_string()))?;
        mio::write_text(
            &out.join(format!("sgd_run_seed{seed}.csv")),
            &mio::sgd_run_csv(&run),
        )
        .map_err(|e| Failure::Config(e.to_string()))?;
        all_runs.push(run);
    }
    let tau_end = scfg.gamma * scfg.steps as f64 / scfg.m as f64;
    let ode_traj = if overlay_ode || cli.svg {
        let opts = cfg.ode.integrate_options();
        macro_ode::integrate(&cfg.spec, tau_end, &opts).ok()
    } else {
        None
    };
    if let (true, Some(traj)) = (overlay_ode, &ode_traj) {
        mio::write_text(&out.join("ode_overlay.csv"), &mio::trajectory_csv(traj, false))
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    if cli.svg {
        let mut series: Vec<svg::Series> = all_runs
            .iter()
            .map(|run| svg::Series {
                label: format!("seed {}", run.seed),
                points: run.measurements.iter().map(|m| (m.tau, m.r_bar)).collect(),
            })
            .collect();
        if let Some(traj) = &ode_traj {
            series.push(svg::Series {
                label: "infinite-width R".into(),
                points: traj.tau.iter().cloned().zip(traj.r.iter().cloned()).collect(),
            });
        }
        let chart = svg::LineChart {
            title: format!("measured alignment, d={} n={} m={}", scfg.d, scfg.n, scfg.m),
            x_label: "tau".into(),
            y_label: "R".into(),
            x_log: false,
            y_log: false,
            series,
        };
        mio::write_text(&out.join("sgd.svg"), &chart.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    println!(
        "simulate-sgd: {} run(s) of {} steps (d={}, n={}, m={})",
        all_runs.len(),
        scfg.steps,
        scfg.d,
        scfg.n,
        scfg.m
    );
    Ok(())
}

fn cmd_manifold(cli: &Cli, cfg: &RunConfig) -> Result<(), Failure> {
    let m = fastslow::manifold_analysis(&cfg.spec).map_err(|e| Failure::Numeric(e.to_string()))?;
    let out = &cli.out;
    let value = serde_json::json!({
        "spec": cfg.spec,
        "r_h": m.r_h,
        "r_alpha": m.r_alpha,
        "r_star": m.r_star,
        "h_at_r_star": m.h_at_r_star,
        "classification": format!("{:?}", m.classification),
        "witness_r": m.witness_r,
        "branch_csv": "branch.csv",
    });
    mio::write_json(&out.join("manifold.json"), &value)
        .map_err(|e| Failure::Config(e.to_string()))?;
    mio::write_text(&out.join("branch.csv"), &mio::branch_csv(&m))
        .map_err(|e| Failure::Config(e.to_string()))?;
    println!(
        "manifold: R_h = {:.6}, R_alpha = {:.6}, R* = {:.6}, classification {:?}",
        m.r_h, m.r_alpha, m.r_star, m.classification
    );
    Ok(())
}

fn parse_axis(text: &str) -> Result<PhaseAxis, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 4 {
        return Err(Failure::Config(format!(
            "axis '{text}' must be <param>:<lo>:<hi>:<n>"
        )));
    }
    let param = if parts[0] == "a_init" {
        PhaseParam::AInit
    } else if let Some(k) = parts[0].strip_prefix("cstar") {
        let k: usize = k
            .parse()
            .map_err(|_| Failure::Config(format!("bad coefficient index in '{text}'")))?;
        if k == 0 {
            return Err(Failure::Config("coefficient indices are 1-based".into()));
        }
        PhaseParam::TeacherCoeff(k)
    } else {
        return Err(Failure::Config(format!(
            "unknown axis parameter '{}' (use cstar<k> or a_init)",
            parts[0]
        )));
    };
    let lo: f64 = parts[1]
        .parse()
        .map_err(|_| Failure::Config(format!("bad axis bound in '{text}'")))?;
    let hi: f64 = parts[2]
        .parse()
        .map_err(|_| Failure::Config(format!("bad axis bound in '{text}'")))?;
    let n: usize = parts[3]
        .parse()
        .map_err(|_| Failure::Config(format!("bad axis count in '{text}'")))?;
    if n == 0 {
        return Err(Failure::Config("axis needs at least one value".into()));
    }
    Ok(PhaseAxis::linspace(param, lo, hi, n))
}

fn verdict_color(cell: &analysis::PhaseCell) -> String {
    match (&cell.error, cell.verdict) {
        (Some(_), _) => "#000000".into(),
        (None, Some(analysis::Verdict::Unlearning)) => "#d62728".into(),
        (None, Some(analysis::Verdict::Learning)) => "#1f77b4".into(),
        (None, Some(analysis::Verdict::Undecided)) => "#bbbbbb".into(),
        (None, None) => "#000000".into(),
    }
}

fn cmd_phase_map(
    cli: &Cli,
    cfg: &RunConfig,
    axis1: &str,
    axis2: &str,
    tau_max: f64,
) -> Result<(), Failure> {
    let a1 = parse_axis(axis1)?;
    let a2 = parse_axis(axis2)?;
    let opts = cfg.ode.integrate_options();
    let thresholds = cfg.analysis.thresholds();
    let map = analysis::phase_map(&cfg.spec, &a1, &a2, tau_max, thresholds, &opts);
    let out = &cli.out;
    mio::write_text(&out.join("phase_map.csv"), &mio::phase_map_csv(&map))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let summary = map.agreement_summary();
    let value = serde_json::json!({
        "axis1": axis1,
        "axis2": axis2,
        "tau_max": tau_max,
        "thresholds": thresholds,
        "cells": map.cells.len(),
        "agreement": summary,
        "agreement_rate": summary.agreement_rate(),
    });
    mio::write_json(&out.join("phase_map.json"), &value)
        .map_err(|e| Failure::Config(e.to_string()))?;
    if cli.svg {
        let n2 = map.axis2.values.len();
        let mut colors = vec![String::new(); map.cells.len()];
        for c in &map.cells {
            colors[c.i * n2 + c.j] = verdict_color(c);
        }
        let grid = svg::HeatGrid {
            title: format!("numeric verdicts, tau_max = {tau_max:.1e}"),
            x_label: axis1.split(':').next().unwrap_or("axis1").into(),
            y_label: axis2.split(':').next().unwrap_or("axis2").into(),
            x_values: map.axis1.values.clone(),
            y_values: map.axis2.values.clone(),
            colors,
            legend: vec![
                ("unlearning".into(), "#d62728".into()),
                ("learning".into(), "#1f77b4".into()),
                ("undecided".into(), "#bbbbbb".into()),
                ("error".into(), "#000000".into()),
            ],
        };
        mio::write_text(&out.join("phase_map.svg"), &grid.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    println!(
        "phase-map: {} cells, agreement {}/{} on analytic-unlearning cells",
        map.cells.len(),
        summary.agreed,
        summary.scored
    );
    Ok(())
}

fn cmd_scaling(cli: &Cli, cfg: &RunConfig, tau_max: f64, decades: u32) -> Result<(), Failure> {
    let opts = cfg.ode.integrate_options();
    let (traj, handoff) = fastslow::hybrid_trajectory(&cfg.spec, tau_max, &opts)
        .map_err(|e| Failure::Numeric(e.to_string()))?;
    let fit_r = analysis::fit_tail(&traj, FitVariable::R, decades);
    let fit_a = analysis::fit_tail(&traj, FitVariable::A, decades);
    let ra = analysis::ra_limit(&traj, &cfg.spec);
    let out = &cli.out;
    mio::write_text(&out.join("trajectory.csv"), &mio::trajectory_csv(&traj, false))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let fit_json = |f: &Result<analysis::ScalingFit, analysis::FitError>| match f {
        Ok(f) => serde_json::json!({
            "fitted_slope": f.fitted_slope,
            "theory_slope": f.theory_slope,
            "window": f.window,
            "r_squared": f.r_squared,
        }),
        Err(e) => serde_json::json!({"error": e.to_string()}),
    };
    let value = serde_json::json!({
        "spec": cfg.spec,
        "tau_max": tau_max,
        "handoff_tau": handoff,
        "fit_R": fit_json(&fit_r),
        "fit_a": fit_json(&fit_a),
        "ra_limit": ra,
    });
    mio::write_json(&out.join("scaling.json"), &value)
        .map_err(|e| Failure::Config(e.to_string()))?;
    if cli.svg {
        let chart = svg::LineChart {
            title: "tail scaling".into(),
            x_label: "tau".into(),
            y_label: "|R|, a".into(),
            x_log: true,
            y_log: true,
            series: vec![
                svg::Series {
                    label: "|R|".into(),
                    points: traj
                        .tau
                        .iter()
                        .cloned()
                        .zip(traj.r.iter().map(|r| r.abs()))
                        .collect(),
                },
                svg::Series {
                    label: "a".into(),
                    points: traj.tau.iter().cloned().zip(traj.a.iter().cloned()).collect(),
                },
            ],
        };
        mio::write_text(&out.join("scaling.svg"), &chart.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    match (&fit_r, &fit_a) {
        (Ok(fr), Ok(fa)) => println!(
            "scaling: R slope {:.4} (theory {:.4}), a slope {:.4} (theory {:.4}), R*a tail {:.4} (target {:.4})",
            fr.fitted_slope, fr.theory_slope, fa.fitted_slope, fa.theory_slope,
            ra.product_tail_mean, ra.target
        ),
        _ => println!("scaling: fit unavailable (see scaling.json)"),
    }
    Ok(())
}

fn cmd_coeff_sweep(
    cli: &Cli,
    cfg: &RunConfig,
    c2: &[f64],
    c3: &[f64],
    tau_max: f64,
) -> Result<(), Failure> {
    let opts = cfg.ode.integrate_options();
    let thresholds = cfg.analysis.thresholds();
    let cells = analysis::coefficient_sweep(&cfg.spec, c2, c3, tau_max, thresholds, &opts);
    let out = &cli.out;
    let mut rows = vec![];
    let mut series = vec![];
    for (idx, cell) in cells.iter().enumerate() {
        let name = format!(
            "sweep_c2_{}_c3_{}.csv",
            fmt_tag(cell.c_star_2),
            fmt_tag(cell.c_star_3)
        );
        if cell.error.is_none() {
            mio::write_text(&out.join(&name), &mio::trajectory_csv(&cell.traj, false))
                .map_err(|e| Failure::Config(e.to_string()))?;
            if cli.svg && idx < 16 {
                series.push(svg::Series {
                    label: format!("c*2={} c*3={}", cell.c_star_2, cell.c_star_3),
                    points: cell
                        .traj
                        .r
                        .iter()
                        .cloned()
                        .zip(cell.traj.a.iter().cloned())
                        .collect(),
                });
            }
        }
        rows.push(serde_json::json!({
            "c_star_2": cell.c_star_2,
            "c_star_3": cell.c_star_3,
            "verdict": cell.verdict.map(|v| format!("{v:?}")),
            "analytic": cell.analytic.map(|c| format!("{c:?}")),
            "agree": cell.agree,
            "error": cell.error,
            "csv": cell.error.is_none().then_some(name),
        }));
    }
    mio::write_json(
        &out.join("sweep_summary.json"),
        &serde_json::json!({ "cells": rows }),
    )
    .map_err(|e| Failure::Config(e.to_string()))?;
    if cli.svg {
        let chart = svg::LineChart {
            title: "coefficient sweep, (R, a) plane".into(),
            x_label: "R".into(),
            y_label: "a".into(),
            x_log: false,
            y_log: false,
            series,
        };
        mio::write_text(&out.join("sweep.svg"), &chart.render())
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    println!("coeff-sweep: {} cells written", cells.len());
    Ok(())
}

fn fmt_tag(x: f64) -> String {
    format!("{x}").replace('-', "m").replace('.', "p")
}
