//! Verdicts and fits over trajectories: unlearning detection, power-law
//! tail fitting, the R*a limit check, and parameter sweeps over coefficient
//! and initialization grids.

use crate::coefficients::{CaseTag, CoefficientSpec};
use crate::fastslow::{self, Classification};
use crate::macro_ode::{self, IntegrateOptions, MacroTrajectory};
use crate::rk45::Termination;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Detection thresholds; defaults follow the operational definition used
/// throughout (peak must clear c_bar, the tail must fall below zero, a
/// learning run must hold above learn). They are configurable because the
/// attainable peak is the manifold entry point, roughly
/// (c*_1/c_1) / a_init, which depends on the grid being scanned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub c_bar: f64,
    pub zero: f64,
    pub learn: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            c_bar: 0.2,
            zero: 0.05,
            learn: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Unlearning,
    Learning,
    Undecided,
}

/// Numeric verdict over one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearningVerdict {
    pub peak_r: f64,
    pub peak_tau: f64,
    /// Geometric mean of |R| over the last decade of tau.
    pub final_r: f64,
    pub verdict: Verdict,
    pub thresholds: Thresholds,
}

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("horizon too short: |R| never left {0} and tau_end = {1} < 1e3")]
    HorizonTooShort(f64, f64),
    #[error("trajectory has fewer than 2 samples")]
    TooFewSamples,
}

/// Peak/decay classification. The peak is taken over the full horizon; the
/// "final" level is the geometric mean of |R| over the last decade of tau
/// (log-spaced samples make the geometric mean the stable choice). A run
/// that ended in blow-up of `a` with |R| already below the zero threshold
/// counts as unlearning: divergence of the second layer accompanies the
/// alignment collapse.
pub fn detect_unlearning(
    traj: &MacroTrajectory,
    thresholds: Thresholds,
) -> Result<UnlearningVerdict, DetectError> {
    if traj.len() < 2 {
        return Err(DetectError::TooFewSamples);
    }
    let tau_end = traj.tau_end();
    let mut peak_r = 0.0f64;
    let mut peak_tau = 0.0f64;
    for i in 0..traj.len() {
        let r = traj.r[i].abs();
        if r > peak_r {
            peak_r = r;
            peak_tau = traj.tau[i];
        }
    }
    if peak_r < thresholds.c_bar / 2.0 && tau_end < 1e3 {
        return Err(DetectError::HorizonTooShort(thresholds.c_bar / 2.0, tau_end));
    }
    let final_r = geometric_mean_abs(traj, tau_end / 10.0, |t, i| t.r[i]);

    let blown_up = matches!(traj.meta.termination, Termination::BlowUp { .. });
    let last_r = traj.r.last().unwrap().abs();
    let verdict = if peak_r >= thresholds.c_bar
        && (final_r <= thresholds.zero || (blown_up && last_r < thresholds.zero))
    {
        Verdict::Unlearning
    } else if final_r >= thresholds.learn {
        Verdict::Learning
    } else {
        Verdict::Undecided
    };
    Ok(UnlearningVerdict {
        peak_r,
        peak_tau,
        final_r,
        verdict,
        thresholds,
    })
}

fn geometric_mean_abs(
    traj: &MacroTrajectory,
    tau_lo: f64,
    value: impl Fn(&MacroTrajectory, usize) -> f64,
) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..traj.len() {
        if traj.tau[i] >= tau_lo && traj.tau[i] > 0.0 {
            acc += value(traj, i).abs().max(1e-300).ln();
            n += 1;
        }
    }
    if n == 0 {
        value(traj, traj.len() - 1).abs()
    } else {
        (acc / n as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitVariable {
    R,
    A,
}

/// Least-squares log-log tail fit against the case-split exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub variable: FitVariable,
    pub fitted_slope: f64,
    pub theory_slope: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("trajectory spans {0:.2e}, need at least {1:.2e} past the transient")]
    InsufficientRange(f64, f64),
    #[error("no theoretical exponent: spec satisfies neither redundancy case")]
    NoTheorySlope,
    #[error("fewer than 4 usable samples in the fit window")]
    TooFewSamples,
}

/// Slope of log|variable| against log tau over the last `decades` decades.
pub fn fit_tail(
    traj: &MacroTrajectory,
    variable: FitVariable,
    decades: u32,
) -> Result<ScalingFit, FitError> {
    let tau_end = traj.tau_end();
    let needed = 10f64.powi(decades as i32 + 1);
    if tau_end < needed {
        return Err(FitError::InsufficientRange(tau_end, needed));
    }
    let indices = traj.spec.degree_indices();
    let exponent = match indices.case_tag {
        CaseTag::CaseI => 1.0 / (2.0 * indices.k1 as f64),
        CaseTag::CaseII => 1.0 / (indices.k0 as f64 + 1.0),
        CaseTag::Neither => return Err(FitError::NoTheorySlope),
    };
    let theory_slope = match variable {
        FitVariable::R => -exponent,
        FitVariable::A => exponent,
    };
    let tau_lo = tau_end / 10f64.powi(decades as i32);
    let pts: Vec<(f64, f64)> = (0..traj.len())
        .filter(|&i| traj.tau[i] >= tau_lo && traj.tau[i] > 0.0)
        .filter_map(|i| {
            let v = match variable {
                FitVariable::R => traj.r[i].abs(),
                FitVariable::A => traj.a[i].abs(),
            };
            (v > 0.0).then(|| (traj.tau[i].ln(), v.ln()))
        })
        .collect();
    if pts.len() < 4 {
        return Err(FitError::TooFewSamples);
    }
    let (slope, r2) = least_squares(&pts);
    Ok(ScalingFit {
        variable,
        fitted_slope: slope,
        theory_slope,
        window: (tau_lo, tau_end),
        r_squared: r2,
    })
}

/// (slope, r_squared) of the ordinary least-squares line through `pts`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}

/// Tail mean of the product R*a against its predicted limit c*_1/c_1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaLimit {
    pub product_tail_mean: f64,
    pub target: f64,
    pub rel_err: f64,
}

pub fn ra_limit(traj: &MacroTrajectory, spec: &CoefficientSpec) -> RaLimit {
    let tau_end = traj.tau_end();
    let mean = geometric_mean_abs(traj, tau_end / 10.0, |t, i| t.r[i] * t.a[i]);
    let target = spec.c_teacher()[0] / spec.c_student()[0];
    RaLimit {
        product_tail_mean: mean,
        target,
        rel_err: (mean - target).abs() / target.abs(),
    }
}

/// Which parameter a sweep axis varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhaseParam {
    /// 1-based teacher coefficient index.
    TeacherCoeff(usize),
    AInit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseAxis {
    pub param: PhaseParam,
    pub values: Vec<f64>,
}

impl PhaseAxis {
    pub fn linspace(param: PhaseParam, lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 1);
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self { param, values }
    }

    fn apply(&self, spec: &CoefficientSpec, value: f64) -> Result<CoefficientSpec, String> {
        match self.param {
            PhaseParam::TeacherCoeff(k) => {
                spec.with_teacher_coeff(k, value).map_err(|e| e.to_string())
            }
            PhaseParam::AInit => spec.with_a_init(value).map_err(|e| e.to_string()),
        }
    }
}

/// One sweep cell: numeric verdict vs analytic classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseCell {
    pub i: usize,
    pub j: usize,
    pub value1: f64,
    pub value2: f64,
    pub verdict: Option<Verdict>,
    pub analytic: Option<Classification>,
    pub agree: Option<bool>,
    pub peak_r: Option<f64>,
    pub final_r: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseMap {
    pub axis1: PhaseAxis,
    pub axis2: PhaseAxis,
    pub tau_max: f64,
    pub thresholds: Thresholds,
    pub cells: Vec<PhaseCell>,
}

/// Agreement statistics over the cells where the analytic classifier makes
/// the unlearning claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub scored: usize,
    pub agreed: usize,
    /// Disagreements sitting next to (8-neighborhood) a cell with a
    /// different analytic classification, i.e. on the classification
    /// boundary where finite horizons blur the verdict.
    pub disagreed_boundary: usize,
    pub disagreed_interior: usize,
}

impl AgreementSummary {
    pub fn agreement_rate(&self) -> f64 {
        if self.scored == 0 {
            return 1.0;
        }
        self.agreed as f64 / self.scored as f64
    }
}

impl PhaseMap {
    fn cell(&self, i: usize, j: usize) -> &PhaseCell {
        &self.cells[i * self.axis2.values.len() + j]
    }

    pub fn agreement_summary(&self) -> AgreementSummary {
        let (n1, n2) = (self.axis1.values.len(), self.axis2.values.len());
        let mut s = AgreementSummary {
            scored: 0,
            agreed: 0,
            disagreed_boundary: 0,
            disagreed_interior: 0,
        };
        for i in 0..n1 {
            for j in 0..n2 {
                let c = self.cell(i, j);
                if c.analytic != Some(Classification::Unlearning) {
                    continue;
                }
                s.scored += 1;
                if c.verdict == Some(Verdict::Unlearning) {
                    s.agreed += 1;
                    continue;
                }
                let mut at_boundary = false;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= n1 as i64 || nj >= n2 as i64 {
                            continue;
                        }
                        if self.cell(ni as usize, nj as usize).analytic
                            != Some(Classification::Unlearning)
                        {
                            at_boundary = true;
                        }
                    }
                }
                if at_boundary {
                    s.disagreed_boundary += 1;
                } else {
                    s.disagreed_interior += 1;
                }
            }
        }
        s
    }
}

/// Run the numeric and analytic classifiers over a parameter grid. Cells
/// run in parallel; individual failures are recorded in the cell and never
/// abort the sweep. The numeric side uses the plain full dynamics so the
/// two classifiers stay independent.
pub fn phase_map(
    base: &CoefficientSpec,
    axis1: &PhaseAxis,
    axis2: &PhaseAxis,
    tau_max: f64,
    thresholds: Thresholds,
    opts: &IntegrateOptions,
) -> PhaseMap {
    let jobs: Vec<(usize, usize)> = (0..axis1.values.len())
        .flat_map(|i| (0..axis2.values.len()).map(move |j| (i, j)))
        .collect();
    let cells: Vec<PhaseCell> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let v1 = axis1.values[i];
            let v2 = axis2.values[j];
            let mut cell = PhaseCell {
                i,
                j,
                value1: v1,
                value2: v2,
                verdict: None,
                analytic: None,
                agree: None,
                peak_r: None,
                final_r: None,
                error: None,
            };
            let spec = match axis1.apply(base, v1).and_then(|s| axis2.apply(&s, v2)) {
                Ok(s) => s,
                Err(e) => {
                    cell.error = Some(e);
                    return cell;
                }
            };
            let analytic = match fastslow::manifold_analysis(&spec) {
                Ok(m) => m.classification,
                Err(e) => {
                    cell.error = Some(e.to_string());
                    return cell;
                }
            };
            cell.analytic = Some(analytic);
            let traj = match macro_ode::integrate(&spec, tau_max, opts) {
                Ok(t) => t,
                Err(e) => {
                    cell.error = Some(e.to_string());
                    return cell;
                }
            };
            match detect_unlearning(&traj, thresholds) {
                Ok(v) => {
                    cell.peak_r = Some(v.peak_r);
                    cell.final_r = Some(v.final_r);
                    cell.verdict = Some(v.verdict);
                    cell.agree = Some(match (analytic, v.verdict) {
                        (Classification::Unlearning, Verdict::Unlearning) => true,
                        (Classification::Unlearning, _) => false,
                        (Classification::LearningCandidate, Verdict::Learning) => true,
                        (Classification::LearningCandidate, _) => false,
                        (Classification::OutOfScope, _) => true,
                    });
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();
    PhaseMap {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        tau_max,
        thresholds,
        cells,
    }
}

/// One cell of the teacher-coefficient gallery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub c_star_2: f64,
    pub c_star_3: f64,
    pub traj: MacroTrajectory,
    pub verdict: Option<Verdict>,
    pub analytic: Option<Classification>,
    pub agree: Option<bool>,
    pub error: Option<String>,
}

/// Batch driver over (c*_2, c*_3) combinations with the degree-7 student
/// c = (1,...,1) and teacher tail fixed to ones. Emits one trajectory per
/// combination for (R, a)-plane galleries.
pub fn coefficient_sweep(
    base: &CoefficientSpec,
    c2_grid: &[f64],
    c3_grid: &[f64],
    tau_max: f64,
    thresholds: Thresholds,
    opts: &IntegrateOptions,
) -> Vec<SweepCell> {
    let jobs: Vec<(f64, f64)> = c2_grid
        .iter()
        .flat_map(|&a| c3_grid.iter().map(move |&b| (a, b)))
        .collect();
    jobs.par_iter()
        .map(|&(c2, c3)| {
            let spec = base
                .with_teacher_coeff(2, c2)
                .and_then(|s| s.with_teacher_coeff(3, c3));
            match spec {
                Err(e) => SweepCell {
                    c_star_2: c2,
                    c_star_3: c3,
                    traj: empty_traj(base),
                    verdict: None,
                    analytic: None,
                    agree: None,
                    error: Some(e.to_string()),
                },
                Ok(spec) => {
                    let analytic = fastslow::manifold_analysis(&spec)
                        .map(|m| m.classification)
                        .ok();
                    let traj = macro_ode::integrate(&spec, tau_max, opts)
                        .expect("validated options");
                    let verdict = detect_unlearning(&traj, thresholds).ok().map(|v| v.verdict);
                    let agree = match (analytic, verdict) {
                        (Some(Classification::Unlearning), Some(v)) => {
                            Some(v == Verdict::Unlearning)
                        }
                        (Some(Classification::LearningCandidate), Some(v)) => {
                            Some(v == Verdict::Learning)
                        }
                        (Some(Classification::OutOfScope), Some(_)) => Some(true),
                        _ => None,
                    };
                    SweepCell {
                        c_star_2: c2,
                        c_star_3: c3,
                        traj,
                        verdict,
                        analytic,
                        agree,
                        error: None,
                    }
                }
            }
        })
        .collect()
}

fn empty_traj(spec: &CoefficientSpec) -> MacroTrajectory {
    MacroTrajectory {
        tau: vec![0.0],
        r: vec![0.0],
        a: vec![spec.a_init()],
        q: None,
        spec: spec.clone(),
        meta: crate::macro_ode::TrajectoryMeta {
            rel_tol: 0.0,
            abs_tol: 0.0,
            termination: Termination::Completed,
            steps_accepted: 0,
            steps_rejected: 0,
            method: "empty".into(),
        },
    }
}
