//! CSV and JSON emission. All floating-point columns are written with 17
//! significant digits so values survive the round trip exactly.

use crate::analysis::PhaseMap;
use crate::fastslow::ManifoldAnalysis;
use crate::macro_ode::{self, MacroTrajectory};
use crate::width_sim::SgdRun;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// 17 significant digits, scientific.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trajectory CSV with header `tau,R,a[,Q][,loss]`.
pub fn trajectory_csv(traj: &MacroTrajectory, with_loss: bool) -> String {
    let mut out = String::new();
    out.push_str("tau,R,a");
    if traj.q.is_some() {
        out.push_str(",Q");
    }
    if with_loss {
        out.push_str(",loss");
    }
    out.push('\n');
    for i in 0..traj.len() {
        let _ = write!(
            out,
            "{},{},{}",
            fmt_f64(traj.tau[i]),
            fmt_f64(traj.r[i]),
            fmt_f64(traj.a[i])
        );
        if let Some(q) = &traj.q {
            let _ = write!(out, ",{}", fmt_f64(q[i]));
        }
        if with_loss {
            let loss = macro_ode::test_loss(traj.state(i), &traj.spec);
            let _ = write!(out, ",{}", fmt_f64(loss));
        }
        out.push('\n');
    }
    out
}

/// JSON envelope carrying the spec and integration metadata (the data rows
/// live in the CSV).
pub fn trajectory_envelope(traj: &MacroTrajectory, csv_name: &str) -> serde_json::Value {
    serde_json::json!({
        "spec": traj.spec,
        "meta": traj.meta,
        "samples": traj.len(),
        "tau_end": traj.tau_end(),
        "csv": csv_name,
    })
}

/// Measured-run CSV: the trajectory schema plus spread columns.
pub fn sgd_run_csv(run: &SgdRun) -> String {
    let mut out = String::from("tau,R,a,R_std,a_std,Q_bar\n");
    for m in &run.measurements {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(m.tau),
            fmt_f64(m.r_bar),
            fmt_f64(m.a_bar),
            fmt_f64(m.r_std),
            fmt_f64(m.a_std),
            fmt_f64(m.q_bar),
        );
    }
    out
}

/// Branch table CSV with header `R,h,alpha`.
pub fn branch_csv(analysis: &ManifoldAnalysis) -> String {
    let mut out = String::from("R,h,alpha\n");
    for i in 0..analysis.branch.r.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(analysis.branch.r[i]),
            fmt_f64(analysis.branch.h[i]),
            fmt_f64(analysis.branch.alpha[i]),
        );
    }
    out
}

/// Phase-map CSV with one row per cell.
pub fn phase_map_csv(map: &PhaseMap) -> String {
    let mut out = String::from("axis1,axis2,verdict,analytic,agree,peak_R,final_R\n");
    for c in &map.cells {
        let verdict = c
            .verdict
            .map(|v| format!("{v:?}"))
            .unwrap_or_else(|| "error".into());
        let analytic = c
            .analytic
            .map(|v| format!("{v:?}"))
            .unwrap_or_else(|| "error".into());
        let agree = c
            .agree
            .map(|b| b.to_string())
            .unwrap_or_else(|| "".into());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(c.value1),
            fmt_f64(c.value2),
            verdict,
            analytic,
            agree,
            c.peak_r.map(fmt_f64).unwrap_or_default(),
            c.final_r.map(fmt_f64).unwrap_or_default(),
        );
    }
    out
}

pub fn write_text(path: &Path, content: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> io::Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpec;
    use crate::macro_ode::{integrate, IntegrateOptions};

    #[test]
    fn csv_round_trips_17_digits() {
        let x = std::f64::consts::PI * 1e-7;
        let s = fmt_f64(x);
        let back: f64 = s.parse().unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn trajectory_csv_shape() {
        let spec =
            CoefficientSpec::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.0, 2.0).unwrap();
        let traj = integrate(&spec, 1.0, &IntegrateOptions::default()).unwrap();
        let csv = trajectory_csv(&traj, true);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "tau,R,a,loss");
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0].parse::<f64>().unwrap(), 0.0);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 2.0);
        assert_eq!(csv.lines().count(), traj.len() + 1);
    }
}
