//! Time-scale separation machinery: Jacobian spectra along trajectories,
//! time-averaged eigenvalue diagnostics, the critical manifold a = h(R)
//! with its roots and monotone-branch inverse, the reduced slow flow, and
//! the analytic unlearning classifier.
//!
//! The nontrivial branch of the R-nullcline is a = h(R) = 2 S'(R) / T'(R);
//! the drift along it is controlled by alpha(R) = S T' - 2 S' T through
//! the reduced scalar equation da/dtau = alpha(xi(a)) / T'(xi(a)), where
//! xi is the branch inverse. The stiffness of the full system on long
//! horizons (|lambda_f| grows like a^2) is handled structurally by handing
//! the integration over to this reduced equation once the fast transient
//! has collapsed onto the branch; no implicit solver is involved.

use crate::coefficients::{CaseTag, CoefficientSpec};
use crate::macro_ode::{
    self, IntegrateOptions, MacroState, MacroTrajectory, TrajectoryMeta, BLOW_UP_BOUND,
};
use crate::rk45::{self, StepControl, Termination};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Jacobian entries, eigenvalues and fast eigenvector at one trajectory
/// point. Eigenvalues are ordered by magnitude of the real part:
/// |lambda_f| >= |lambda_s| (the fast direction is the strongly contracting
/// one). `lambda_max`/`lambda_min` recover the signed ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    pub tau: f64,
    pub f_r: f64,
    pub f_a: f64,
    pub g_r: f64,
    pub g_a: f64,
    pub lambda_f: f64,
    pub lambda_s: f64,
    /// Unit fast eigenvector, sign fixed so the R component is nonnegative.
    /// None when the spectrum is complex.
    pub v_f: Option<[f64; 2]>,
    /// v_f . e_R; None when the spectrum is complex.
    pub align: Option<f64>,
    pub complex: bool,
}

impl SpectralSample {
    /// Signed ordering: largest eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_f.max(self.lambda_s)
    }
    /// Signed ordering: smallest eigenvalue.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_f.min(self.lambda_s)
    }
}

/// Closed-form 2x2 Jacobian of the macroscopic vector field plus its
/// eigen-decomposition.
pub fn jacobian(state: MacroState, spec: &CoefficientSpec) -> SpectralSample {
    let (r, a) = (state.r, state.a);
    let sd = spec.series_s_d1(r);
    let sdd = spec.series_s_d2(r);
    let td = spec.series_t_d1(r);
    let tdd = spec.series_t_d2(r);
    let g_r = sd - a * td;
    let g_a = -spec.series_t(r);
    let f_a = (1.0 - r * r) * g_r;
    let f_r = 0.5
        * a
        * ((-2.0 * r) * (2.0 * sd - a * td) + (1.0 - r * r) * (2.0 * sdd - a * tdd));

    let tr = f_r + g_a;
    let det = f_r * g_a - f_a * g_r;
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        return SpectralSample {
            tau: state.tau,
            f_r,
            f_a,
            g_r,
            g_a,
            lambda_f: 0.5 * tr,
            lambda_s: 0.5 * tr,
            v_f: None,
            align: None,
            complex: true,
        };
    }
    let sq = disc.sqrt();
    let l1 = 0.5 * (tr + sq);
    let l2 = 0.5 * (tr - sq);
    let (lambda_f, lambda_s) = if l1.abs() >= l2.abs() { (l1, l2) } else { (l2, l1) };

    // eigenvector for lambda_f from the better-conditioned row
    let v = eigenvector(f_r, f_a, g_r, g_a, lambda_f);
    let v = if v[0] < 0.0 { [-v[0], -v[1]] } else { v };
    SpectralSample {
        tau: state.tau,
        f_r,
        f_a,
        g_r,
        g_a,
        lambda_f,
        lambda_s,
        v_f: Some(v),
        align: Some(v[0]),
        complex: false,
    }
}

fn eigenvector(f_r: f64, f_a: f64, g_r: f64, g_a: f64, lambda: f64) -> [f64; 2] {
    // rows of (J - lambda I); pick the one with the larger leading entry
    let r1 = [f_r - lambda, f_a];
    let r2 = [g_r, g_a - lambda];
    let (p, q) = if r1[0].abs().max(r1[1].abs()) >= r2[0].abs().max(r2[1].abs()) {
        (r1[0], r1[1])
    } else {
        (r2[0], r2[1])
    };
    // (p, q) . v = 0  =>  v ∝ (q, -p)
    let mut v = [q, -p];
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        return [1.0, 0.0];
    }
    v[0] /= n;
    v[1] /= n;
    v
}

/// Spectral samples along a trajectory.
pub fn spectral_samples(traj: &MacroTrajectory, spec: &CoefficientSpec) -> Vec<SpectralSample> {
    (0..traj.len()).map(|i| jacobian(traj.state(i), spec)).collect()
}

/// Time-averaged eigenvalue magnitudes and fast-eigenvector alignment over
/// [0, horizon].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzReport {
    /// Time average of |lambda_f|.
    pub lambda_f: f64,
    /// Time average of |lambda_s|.
    pub lambda_s: f64,
    /// lambda_s / lambda_f; the separation certificate when << 1.
    pub epsilon: f64,
    pub mean_align: f64,
    pub horizon: f64,
    pub complex_fraction: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum AnsatzError {
    #[error("trajectory does not cover the horizon {0}")]
    HorizonNotCovered(f64),
    #[error("complex spectra dominate: {0:.1}% of samples")]
    ComplexSpectrumDominant(f64),
}

/// Trapezoidal time averages of |lambda_f|, |lambda_s| and v_f . e_R over
/// [0, horizon]. Samples with complex spectra are skipped in the alignment
/// average; the run fails if they exceed 5% of the horizon's samples.
pub fn ansatz_report(
    traj: &MacroTrajectory,
    spec: &CoefficientSpec,
    horizon: f64,
) -> Result<AnsatzReport, AnsatzError> {
    if traj.tau_end() < horizon * (1.0 - 1e-12) {
        return Err(AnsatzError::HorizonNotCovered(horizon));
    }
    let mut prev: Option<(f64, f64, f64, Option<f64>)> = None;
    let mut int_f = 0.0;
    let mut int_s = 0.0;
    let mut int_align = 0.0;
    let mut align_span = 0.0;
    let mut n = 0usize;
    let mut n_complex = 0usize;
    for i in 0..traj.len() {
        let tau = traj.tau[i];
        if tau > horizon * (1.0 + 1e-12) {
            break;
        }
        let s = jacobian(traj.state(i), spec);
        n += 1;
        if s.complex {
            n_complex += 1;
        }
        let cur = (tau, s.lambda_f.abs(), s.lambda_s.abs(), s.align);
        if let Some((t0, lf0, ls0, al0)) = prev {
            let dt = cur.0 - t0;
            int_f += 0.5 * (lf0 + cur.1) * dt;
            int_s += 0.5 * (ls0 + cur.2) * dt;
            if let (Some(a0), Some(a1)) = (al0, cur.3) {
                int_align += 0.5 * (a0 + a1) * dt;
                align_span += dt;
            }
        }
        prev = Some(cur);
    }
    let frac = n_complex as f64 / n.max(1) as f64;
    if frac > 0.05 {
        return Err(AnsatzError::ComplexSpectrumDominant(100.0 * frac));
    }
    let lf = int_f / horizon;
    let ls = int_s / horizon;
    Ok(AnsatzReport {
        lambda_f: lf,
        lambda_s: ls,
        epsilon: ls / lf,
        mean_align: if align_span > 0.0 {
            int_align / align_span
        } else {
            f64::NAN
        },
        horizon,
        complex_fraction: frac,
    })
}

/// Nontrivial branch of the R-nullcline, a = h(R) = 2 S'(R) / T'(R).
pub fn h_of_r(spec: &CoefficientSpec, r: f64) -> f64 {
    2.0 * spec.series_s_d1(r) / spec.series_t_d1(r)
}

/// h'(R) by the quotient rule: 2 (S'' T' - S' T'') / T'^2.
pub fn h_prime(spec: &CoefficientSpec, r: f64) -> f64 {
    let td = spec.series_t_d1(r);
    2.0 * (spec.series_s_d2(r) * td - spec.series_s_d1(r) * spec.series_t_d2(r)) / (td * td)
}

/// alpha(R) = S(R) T'(R) - 2 S'(R) T(R); its sign sets the direction of the
/// slow drift along the branch.
pub fn alpha_of_r(spec: &CoefficientSpec, r: f64) -> f64 {
    spec.series_s(r) * spec.series_t_d1(r) - 2.0 * spec.series_s_d1(r) * spec.series_t(r)
}

/// Analytic verdict from the branch geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    /// a_init lies on the divergent part of the branch: the sufficient
    /// condition for unlearning holds.
    Unlearning,
    /// a_init sits below the branch range; trajectories are expected to
    /// keep their alignment (sufficient condition not established, hence
    /// "candidate").
    LearningCandidate,
    /// The spec satisfies neither redundancy case; the classifier makes no
    /// claim.
    OutOfScope,
}

/// Tabulated monotone branch a = h(R) on (0, R*), with alpha alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTable {
    pub r: Vec<f64>,
    pub h: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Roots, branch table and classification for one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldAnalysis {
    /// First critical point of h in (0,1); 1 if none.
    pub r_h: f64,
    /// First root of alpha in (0,1); 1 if none.
    pub r_alpha: f64,
    /// min(r_h, r_alpha).
    pub r_star: f64,
    /// Branch value at the right end of the monotone interval.
    pub h_at_r_star: f64,
    pub branch: BranchTable,
    pub classification: Classification,
    /// R with h(R) = a_init when classification is Unlearning.
    pub witness_r: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifoldError {
    #[error("sign changes closer than 2 grid cells at {0} cells; refine limit reached")]
    GridTooCoarse(usize),
}

const SCAN_LO: f64 = 1e-6;
const SCAN_HI: f64 = 1.0 - 1e-9;
const ROOT_TOL: f64 = 1e-10;
const MAX_CELLS: usize = 1 << 20;

/// Locate roots of h' and alpha, tabulate the monotone branch, and classify
/// the initialization.
pub fn manifold_analysis(spec: &CoefficientSpec) -> Result<ManifoldAnalysis, ManifoldError> {
    let r_h = first_root(|r| h_prime(spec, r))?;
    let r_alpha = first_root(|r| alpha_of_r(spec, r))?;
    let r_star = r_h.min(r_alpha);

    // branch table, log-spaced to resolve the small-R blow-up of h
    let n = 2000;
    let lo = SCAN_LO;
    let hi = r_star * (1.0 - 1e-9);
    let mut table = BranchTable {
        r: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
    };
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    for i in 0..n {
        let r = lo * (ratio * i as f64).exp();
        table.r.push(r);
        table.h.push(h_of_r(spec, r));
        table.alpha.push(alpha_of_r(spec, r));
    }
    let h_at_r_star = h_of_r(spec, hi);

    let case = spec.degree_indices().case_tag;
    let (classification, witness_r) = if case == CaseTag::Neither {
        (Classification::OutOfScope, None)
    } else if spec.a_init() > h_at_r_star {
        let w = invert_branch(spec, spec.a_init(), r_star);
        (Classification::Unlearning, w)
    } else {
        (Classification::LearningCandidate, None)
    };

    Ok(ManifoldAnalysis {
        r_h,
        r_alpha,
        r_star,
        h_at_r_star,
        branch: table,
        classification,
        witness_r,
    })
}

/// First sign change of `f` on (SCAN_LO, SCAN_HI), polished by bisection;
/// 1 when there is none. Auto-refines when consecutive sign changes sit
/// closer than two grid cells.
fn first_root(f: impl Fn(f64) -> f64) -> Result<f64, ManifoldError> {
    let mut cells = 4096usize;
    loop {
        let step = (SCAN_HI - SCAN_LO) / cells as f64;
        let mut changes: Vec<usize> = Vec::new();
        let mut prev = f(SCAN_LO);
        for i in 1..=cells {
            let x = SCAN_LO + step * i as f64;
            let cur = f(x);
            if prev == 0.0 || prev.signum() != cur.signum() {
                changes.push(i - 1);
                if changes.len() >= 2 {
                    let last2 = changes[changes.len() - 2];
                    if changes[changes.len() - 1] - last2 < 2 {
                        break; // too close; refine
                    }
                }
            }
            prev = cur;
        }
        let too_close = changes
            .windows(2)
            .any(|w| w[1] - w[0] < 2);
        if too_close {
            if cells >= MAX_CELLS {
                return Err(ManifoldError::GridTooCoarse(cells));
            }
            cells *= 2;
            continue;
        }
        let Some(&cell) = changes.first() else {
            return Ok(1.0);
        };
        let mut lo = SCAN_LO + step * cell as f64;
        let mut hi = lo + step;
        let mut flo = f(lo);
        for _ in 0..200 {
            if hi - lo < ROOT_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        return Ok(0.5 * (lo + hi));
    }
}

/// Monotone-branch inverse: the R in (0, r_star) with h(R) = a, if a lies
/// in the branch range (closed at the right edge). h decreases from
/// +infinity to h(r_star) there, so the bracket hunt walks the lower end
/// down by halving.
pub fn invert_branch(spec: &CoefficientSpec, a: f64, r_star: f64) -> Option<f64> {
    let hi = r_star * (1.0 - 1e-9);
    let floor = h_of_r(spec, hi);
    if a == floor {
        return Some(hi);
    }
    if !(a > floor) {
        return None;
    }
    let c_ratio = spec.c_teacher()[0] / spec.c_student()[0];
    let mut lo = (0.5 * c_ratio / a).min(0.5 * hi);
    let mut guard = 0;
    while h_of_r(spec, lo) <= a {
        lo *= 0.5;
        guard += 1;
        if guard > 2000 || lo < f64::MIN_POSITIVE {
            return None;
        }
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let hm = h_of_r(spec, mid);
        if hm > a {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-14 * hi.max(1e-30) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Error, PartialEq)]
pub enum SlowFlowError {
    #[error("a_start = {0} is not on the branch (range starts at {1})")]
    NotOnBranch(f64, f64),
}

/// Integrate the reduced scalar flow da/dtau = alpha(xi(a)) / T'(xi(a)) in
/// unnormalized time from (tau0, a_start), emitting on-manifold samples
/// (tau, xi(a), a). The Lambda_s normalization of the slow time variable is
/// a constant reparametrization and enters only diagnostics, never the
/// dynamics.
///
/// Leaving the branch (a falling below h(R*)) stops the run; the exit is
/// reported through `meta.termination` as an event stop, after which the
/// full 2-d flow must take over.
pub fn slow_flow(
    spec: &CoefficientSpec,
    analysis: &ManifoldAnalysis,
    a_start: f64,
    tau0: f64,
    tau_s_max: f64,
    opts: &IntegrateOptions,
) -> Result<MacroTrajectory, SlowFlowError> {
    if invert_branch(spec, a_start, analysis.r_star).is_none() {
        return Err(SlowFlowError::NotOnBranch(a_start, analysis.h_at_r_star));
    }
    let r_star = analysis.r_star;
    let floor = analysis.h_at_r_star;
    let xi = |a: f64| invert_branch(spec, a, r_star);

    let grid = rk45::log_grid(
        opts.grid_tau_lo.max(tau0 * (1.0 + 1e-12)).min(tau_s_max.max(f64::MIN_POSITIVE)),
        tau_s_max,
        opts.grid_per_decade,
    );
    let mut gi = grid.iter().position(|&g| g > tau0).unwrap_or(grid.len());

    let mut tau_out = vec![tau0];
    let mut a_out = vec![a_start];

    let rk_opts = rk45::Options::<1> {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_clamp: f64::INFINITY,
        underflow_fraction: 1e-14,
    };
    let mut rhs = |_t: f64, y: &[f64; 1]| {
        // below the branch floor the inverse is undefined; the event stop
        // fires before this matters, but keep the rhs total
        let r = xi(y[0].max(floor * (1.0 + 1e-12))).unwrap_or(r_star * (1.0 - 1e-9));
        [alpha_of_r(spec, r) / spec.series_t_d1(r)]
    };
    let stats = rk45::integrate(
        &mut rhs,
        tau0,
        [a_start],
        tau_s_max,
        &rk_opts,
        &mut |_y| 0.0,
        &mut |y: &[f64; 1]| !y[0].is_finite() || y[0].abs() > BLOW_UP_BOUND,
        &mut |seg, t_new, y_new| {
            while gi < grid.len() && grid[gi] <= t_new {
                if grid[gi] > tau0 {
                    let v = seg.eval(grid[gi]);
                    tau_out.push(grid[gi]);
                    a_out.push(v[0]);
                }
                gi += 1;
            }
            if y_new[0] <= floor {
                tau_out.push(t_new);
                a_out.push(y_new[0]);
                return StepControl::Stop;
            }
            StepControl::Continue
        },
    );
    if *tau_out.last().unwrap() < tau_s_max * (1.0 - 1e-12)
        && matches!(stats.termination, Termination::Completed)
    {
        // ensure the end state is present
        tau_out.push(tau_s_max);
        a_out.push(*a_out.last().unwrap());
    }
    let r_out: Vec<f64> = a_out
        .iter()
        .map(|&a| xi(a).unwrap_or(r_star * (1.0 - 1e-9)))
        .collect();
    Ok(MacroTrajectory {
        tau: tau_out,
        r: r_out,
        a: a_out,
        q: None,
        spec: spec.clone(),
        meta: TrajectoryMeta {
            rel_tol: opts.rel_tol,
            abs_tol: opts.abs_tol,
            termination: stats.termination,
            steps_accepted: stats.accepted,
            steps_rejected: stats.rejected,
            method: "reduced-slow-flow".into(),
        },
    })
}

/// Where the fast transient of a trajectory ends: the first sample index at
/// which |f(R, a)| drops below `factor` times the running time-average of
/// |lambda_f|.
pub fn fast_transient_end(
    traj: &MacroTrajectory,
    spec: &CoefficientSpec,
    factor: f64,
) -> Option<usize> {
    let mut int_f = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..traj.len() {
        let st = traj.state(i);
        let s = jacobian(st, spec);
        let lf = s.lambda_f.abs();
        if let Some((t0, lf0)) = prev {
            int_f += 0.5 * (lf0 + lf) * (st.tau - t0);
        }
        prev = Some((st.tau, lf));
        if st.tau > 0.0 {
            let lambda_f_avg = int_f / st.tau;
            let fval = macro_ode::rhs_r(spec, st.r, st.a);
            if fval.abs() < factor * lambda_f_avg {
                return Some(i);
            }
        }
    }
    None
}

/// Long-horizon trajectory for unlearning runs: the full 2-d dynamics is
/// integrated through the fast transient, then handed over to the reduced
/// slow flow at the first on-branch sample. For configurations the
/// classifier does not mark Unlearning, the full dynamics is used for the
/// whole horizon (those runs settle at O(1) rates and need no hand-off).
///
/// Returns the stitched trajectory and the hand-off time, if any.
pub fn hybrid_trajectory(
    spec: &CoefficientSpec,
    tau_max: f64,
    opts: &IntegrateOptions,
) -> Result<(MacroTrajectory, Option<f64>), ManifoldError> {
    let analysis = manifold_analysis(spec)?;
    if analysis.classification != Classification::Unlearning {
        let traj = macro_ode::integrate(spec, tau_max, opts).expect("validated options");
        return Ok((traj, None));
    }
    // full-dynamics leg through the transient; the transient time scales
    // like 1/(a_init c*_1 c_1), so grow the lead until the collapse is seen
    let mut lead = tau_max.min(50.0);
    let lead_cap = tau_max.min(1e4);
    let (full, idx) = loop {
        let full = macro_ode::integrate(spec, lead, opts).expect("validated options");
        if let Some(idx) = fast_transient_end(&full, spec, 1e-3) {
            break (full, Some(idx));
        }
        if lead >= lead_cap {
            break (full, None);
        }
        lead = (lead * 10.0).min(lead_cap);
    };
    let Some(idx) = idx else {
        // transient never settled; integrate the full dynamics outright
        let traj = macro_ode::integrate(spec, tau_max, opts).expect("validated options");
        return Ok((traj, None));
    };
    let cut = full.state(idx);
    let slow = match slow_flow(spec, &analysis, cut.a, cut.tau, tau_max, opts) {
        Ok(s) => s,
        Err(SlowFlowError::NotOnBranch(_, _)) => {
            // the transient carried a below the branch floor; the reduced
            // description does not apply, keep the full dynamics
            let traj = macro_ode::integrate(spec, tau_max, opts).expect("validated options");
            return Ok((traj, None));
        }
    };

    let mut tau = full.tau[..=idx].to_vec();
    let mut r = full.r[..=idx].to_vec();
    let mut a = full.a[..=idx].to_vec();
    tau.extend_from_slice(&slow.tau[1..]);
    r.extend_from_slice(&slow.r[1..]);
    a.extend_from_slice(&slow.a[1..]);
    let meta = TrajectoryMeta {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        termination: slow.meta.termination.clone(),
        steps_accepted: full.meta.steps_accepted + slow.meta.steps_accepted,
        steps_rejected: full.meta.steps_rejected + slow.meta.steps_rejected,
        method: format!("hybrid(full<= {:.6e}, reduced-slow after)", cut.tau),
    };
    Ok((
        MacroTrajectory {
            tau,
            r,
            a,
            q: None,
            spec: spec.clone(),
            meta,
        },
        Some(cut.tau),
    ))
}
