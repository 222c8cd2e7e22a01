//! Right-hand sides and adaptive integration of the macroscopic dynamics
//! (R_tau, a_tau), the population test loss, and the finite-width
//! three-variable recursion whose m -> infinity Euler limit is the ODE.
//!
//! The continuous system, started from (R, a) = (0, a_init), is
//!
//! ```text
//! dR/dtau = f(R, a) = 1/2 a (1 - R^2) { 2 S'(R) - a T'(R) }
//! da/dtau = g(R, a) = S(R) - a T(R)
//! ```
//!
//! The factor (1 - R^2) makes R = ±1 invariant, so |R| <= 1 throughout;
//! the integrator projects roundoff-level overshoot back into the interval.

use crate::coefficients::CoefficientSpec;
use crate::rk45::{self, StepControl, StepStats, Termination};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Everything a is allowed to reach before a run is declared divergent.
/// Divergence is an expected terminal condition for unlearning runs.
pub const BLOW_UP_BOUND: f64 = 1e12;

/// One point of the macroscopic dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub tau: f64,
    pub r: f64,
    pub a: f64,
}

/// Integration metadata attached to every trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub termination: Termination,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub method: String,
}

/// Samples of (tau, R, a), optionally with the pair overlap Q from the
/// finite-width recursion. Stored column-wise; `state(i)` gives row views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroTrajectory {
    pub tau: Vec<f64>,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Option<Vec<f64>>,
    pub spec: CoefficientSpec,
    pub meta: TrajectoryMeta,
}

impl MacroTrajectory {
    pub fn len(&self) -> usize {
        self.tau.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
    pub fn state(&self, i: usize) -> MacroState {
        MacroState {
            tau: self.tau[i],
            r: self.r[i],
            a: self.a[i],
        }
    }
    pub fn last_state(&self) -> MacroState {
        self.state(self.len() - 1)
    }
    /// Final tau actually reached.
    pub fn tau_end(&self) -> f64 {
        *self.tau.last().unwrap()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OdeError {
    #[error("tau_max must be nonnegative, got {0}")]
    BadHorizon(f64),
    #[error("tolerances must lie in (0, 1e-2], got rel={0} abs={1}")]
    BadTolerance(f64, f64),
    #[error("grid density must be positive")]
    BadGrid,
}

#[derive(Debug, Error, PartialEq)]
pub enum DiscreteError {
    #[error("width m must be at least 2, got {0}")]
    BadWidth(usize),
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("recursion overflowed |value| > {BLOW_UP_BOUND} at step {step}")]
    Overflow { step: usize },
}

/// Drift of the alignment: f(R, a) = 1/2 a (1 - R^2)(2 S'(R) - a T'(R)).
pub fn rhs_r(spec: &CoefficientSpec, r: f64, a: f64) -> f64 {
    0.5 * a * (1.0 - r * r) * (2.0 * spec.series_s_d1(r) - a * spec.series_t_d1(r))
}

/// Drift of the second-layer scale: g(R, a) = S(R) - a T(R).
pub fn rhs_a(spec: &CoefficientSpec, r: f64, a: f64) -> f64 {
    spec.series_s(r) - a * spec.series_t(r)
}

/// Both drifts at once.
pub fn rhs(state: MacroState, spec: &CoefficientSpec) -> (f64, f64) {
    (
        rhs_r(spec, state.r, state.a),
        rhs_a(spec, state.r, state.a),
    )
}

/// Population test loss
/// L(R, a) = 1/2 (a^2 T(R) - 2 a S(R) + P*) + 1/2 sigma_eps^2,
/// with P* = E[sigma_star^2]. The dynamics is the gradient flow of this
/// functional (with metric factor (1 - R^2) on the R coordinate), so L is
/// non-increasing along trajectories.
pub fn test_loss(state: MacroState, spec: &CoefficientSpec) -> f64 {
    let r = state.r;
    let a = state.a;
    0.5 * (a * a * spec.series_t(r) - 2.0 * a * spec.series_s(r) + spec.teacher_power())
        + 0.5 * spec.noise_sigma() * spec.noise_sigma()
}

/// Options for [`integrate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Smallest positive tau on the default log-spaced output grid.
    pub grid_tau_lo: f64,
    /// Output points per decade on the default grid.
    pub grid_per_decade: usize,
    /// Explicit output grid; overrides the log grid when set. Must be
    /// strictly increasing and start at 0.
    pub sample_grid: Option<Vec<f64>>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            grid_tau_lo: 1e-4,
            grid_per_decade: 64,
            sample_grid: None,
        }
    }
}

/// Integrate the macroscopic ODE from (0, a_init) up to `tau_max`.
///
/// Returns the trajectory sampled on a log-spaced grid (the dynamics spans
/// decades of tau). Divergence of `a` past [`BLOW_UP_BOUND`] and step-size
/// underflow are reported through `meta.termination`, not as errors: both
/// leave a valid partial trajectory.
pub fn integrate(
    spec: &CoefficientSpec,
    tau_max: f64,
    opts: &IntegrateOptions,
) -> Result<MacroTrajectory, OdeError> {
    if !(tau_max >= 0.0) {
        return Err(OdeError::BadHorizon(tau_max));
    }
    if !(opts.rel_tol > 0.0 && opts.rel_tol <= 1e-2 && opts.abs_tol > 0.0 && opts.abs_tol <= 1e-2)
    {
        return Err(OdeError::BadTolerance(opts.rel_tol, opts.abs_tol));
    }
    if opts.grid_per_decade == 0 {
        return Err(OdeError::BadGrid);
    }
    let grid = match &opts.sample_grid {
        Some(g) => g.clone(),
        None => rk45::log_grid(
            opts.grid_tau_lo.min(tau_max.max(f64::MIN_POSITIVE)),
            tau_max,
            opts.grid_per_decade,
        ),
    };

    let y0 = [0.0, spec.a_init()];
    let mut tau_out = vec![0.0];
    let mut r_out = vec![0.0];
    let mut a_out = vec![spec.a_init()];

    let stats = integrate_raw(spec, y0, 0.0, tau_max, opts, &grid, &mut |t, y| {
        tau_out.push(t);
        r_out.push(y[0]);
        a_out.push(y[1]);
    });

    // make sure the end state is present even when the grid missed it
    dedup_tail(&mut tau_out, &mut r_out, &mut a_out);

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
            method: "dormand-prince-5(4)".into(),
        },
    })
}

/// Core stepping shared by [`integrate`] and the hand-off logic in the
/// fast-slow module. Emits grid samples plus the final state through `emit`.
pub(crate) fn integrate_raw(
    spec: &CoefficientSpec,
    y0: [f64; 2],
    tau0: f64,
    tau_max: f64,
    opts: &IntegrateOptions,
    grid: &[f64],
    emit: &mut impl FnMut(f64, &[f64; 2]),
) -> StepStats {
    let rk_opts = rk45::Options::<2> {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_clamp: 10.0 * opts.abs_tol,
        underflow_fraction: 1e-14,
    };
    let mut gi = grid.iter().position(|&g| g > tau0).unwrap_or(grid.len());
    let mut rhs_f = |_t: f64, y: &[f64; 2]| [rhs_r(spec, y[0], y[1]), rhs_a(spec, y[0], y[1])];
    rk45::integrate(
        &mut rhs_f,
        tau0,
        y0,
        tau_max,
        &rk_opts,
        &mut |y: &mut [f64; 2]| {
            // project R back into [-1, 1]; distance reported to the stepper
            let over = y[0].abs() - 1.0;
            if over > 0.0 {
                y[0] = y[0].clamp(-1.0, 1.0);
                over
            } else {
                0.0
            }
        },
        &mut |y: &[f64; 2]| !y[1].is_finite() || y[1].abs() > BLOW_UP_BOUND,
        &mut |seg, t_new, y_new| {
            while gi < grid.len() && grid[gi] <= t_new {
                let mut v = seg.eval(grid[gi]);
                v[0] = v[0].clamp(-1.0, 1.0);
                emit(grid[gi], &v);
                gi += 1;
            }
            if t_new >= tau_max || (gi < grid.len() && (grid[gi] - t_new).abs() < f64::EPSILON) {
                // exact grid hit handled above; nothing else to do
            }
            let _ = y_new;
            StepControl::Continue
        },
    )
}

fn dedup_tail(tau: &mut Vec<f64>, r: &mut Vec<f64>, a: &mut Vec<f64>) {
    let mut i = 1;
    while i < tau.len() {
        if tau[i] <= tau[i - 1] {
            tau.remove(i);
            r.remove(i);
            a.remove(i);
        } else {
            i += 1;
        }
    }
}

/// Iterate the finite-width three-variable recursion for (R, Q, a) with
/// width `m` and learning rate `gamma`, keeping exactly the O(1/m) drift
/// terms; the unspecified O(1/m^2) remainders are truncated to zero. Emits
/// tau = gamma t / m alongside the step index.
///
/// The drift sums are S'(R), U'(Q), S(R) and U(Q) from the coefficients
/// module: sum_k b_k c*_{k+1} c_{k+1} R^k = S'(R) with b_k = (k+1)(k+1)!.
pub fn integrate_discrete_macro(
    spec: &CoefficientSpec,
    m: usize,
    gamma: f64,
    steps: usize,
    record_every: usize,
) -> Result<MacroTrajectory, DiscreteError> {
    if m < 2 {
        return Err(DiscreteError::BadWidth(m));
    }
    if !(gamma > 0.0) {
        return Err(DiscreteError::BadGamma(gamma));
    }
    let every = record_every.max(1);
    let gm = gamma / m as f64;
    let mut r = 0.0f64;
    let mut q = 0.0f64;
    let mut a = spec.a_init();

    let mut tau_out = Vec::with_capacity(steps / every + 2);
    let mut r_out = Vec::with_capacity(tau_out.capacity());
    let mut a_out = Vec::with_capacity(tau_out.capacity());
    let mut q_out = Vec::with_capacity(tau_out.capacity());
    let mut push = |t: usize, r: f64, q: f64, a: f64| {
        tau_out.push(gamma * t as f64 / m as f64);
        r_out.push(r);
        q_out.push(q);
        a_out.push(a);
    };
    push(0, r, q, a);

    for t in 0..steps {
        let sd = spec.series_s_d1(r); // sum b_k c*_{k+1} c_{k+1} R^k
        let ud = spec.series_u_d1(q); // sum b_k c_{k+1}^2 Q^k
        let s = spec.series_s(r);
        let u = spec.series_u(q);

        let dr = gm * (a * (1.0 - r * r) * sd - a * a * r * (1.0 - q) * ud);
        let dq = gm * (2.0 * a * r * (1.0 - q) * sd - 2.0 * a * a * q * (1.0 - q) * ud);
        let da = gm * (s - a * u);
        r += dr;
        q += dq;
        a += da;

        if !(r.is_finite() && q.is_finite() && a.is_finite())
            || r.abs() > BLOW_UP_BOUND
            || q.abs() > BLOW_UP_BOUND
            || a.abs() > BLOW_UP_BOUND
        {
            return Err(DiscreteError::Overflow { step: t + 1 });
        }
        if (t + 1) % every == 0 || t + 1 == steps {
            push(t + 1, r, q, a);
        }
    }

    Ok(MacroTrajectory {
        tau: tau_out,
        r: r_out,
        a: a_out,
        q: Some(q_out),
        spec: spec.clone(),
        meta: TrajectoryMeta {
            rel_tol: 0.0,
            abs_tol: 0.0,
            termination: Termination::Completed,
            steps_accepted: steps,
            steps_rejected: 0,
            method: format!("finite-width-recursion(m={m},gamma={gamma})"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: &[f64], cs: &[f64], abar: f64) -> CoefficientSpec {
        CoefficientSpec::new(c.to_vec(), cs.to_vec(), 0.0, abar).unwrap()
    }

    #[test]
    fn rhs_at_origin_is_initial_drift() {
        let s = spec(&[1.0, 1.0, 1.0], &[2.0, -1.0, 1.0], 4.0);
        let (dr, da) = rhs(
            MacroState {
                tau: 0.0,
                r: 0.0,
                a: 4.0,
            },
            &s,
        );
        assert_eq!(da, 0.0);
        assert!((dr - 4.0 * 2.0 * 1.0).abs() < 1e-15); // a_init * c*_1 c_1
    }

    #[test]
    fn rhs_vanishes_at_r_one() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 2.0);
        let (dr, _) = rhs(
            MacroState {
                tau: 0.0,
                r: 1.0,
                a: 3.7,
            },
            &s,
        );
        assert_eq!(dr, 0.0);
    }

    #[test]
    fn rhs_hand_value() {
        // c = c* = (1,1): S'(0.5) = 3, T'(0.5) = 2, S(0.5) = 1, T(0.5) = 0.375
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 1.0);
        let (dr, da) = rhs(
            MacroState {
                tau: 0.0,
                r: 0.5,
                a: 1.0,
            },
            &s,
        );
        assert!((dr - 1.5).abs() < 1e-14);
        assert!((da - 0.625).abs() < 1e-14);
    }

    #[test]
    fn zero_horizon_gives_single_sample() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 2.0);
        let traj = integrate(&s, 0.0, &IntegrateOptions::default()).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.state(0).r, 0.0);
        assert_eq!(traj.state(0).a, 2.0);
        assert_eq!(traj.meta.termination, Termination::Completed);
    }

    #[test]
    fn fast_transient_moves_r_not_a() {
        // R rises quickly from 0 while a stays near its initial value
        let s = spec(&[1.0; 5], &[1.0, -1.0, 1.0, -1.0, 1.0], 4.0);
        let traj = integrate(&s, 0.3, &IntegrateOptions::default()).unwrap();
        let end = traj.last_state();
        assert!(end.r > 0.3, "R should have moved, got {}", end.r);
        assert!((end.a - 4.0).abs() < 0.05, "a should stay near 4, got {}", end.a);
    }

    #[test]
    fn r_stays_in_unit_interval() {
        let s = spec(&[1.0; 5], &[1.0; 5], 1.0);
        let traj = integrate(&s, 50.0, &IntegrateOptions::default()).unwrap();
        assert!(traj.r.iter().all(|r| r.abs() <= 1.0));
    }

    #[test]
    fn linear_config_rhs_closed_form_and_fixed_manifold() {
        // c = c* = (1): f = a (1 - R^2)(c*_1 c_1 - a c_1^2 R), g = R - a R^2.
        // The curve a R = 1 consists of equilibria.
        let s = CoefficientSpec::new(vec![1.0, 1e-12], vec![1.0, 1e-12], 0.0, 2.0).unwrap();
        for &(r, a) in &[(0.3, 1.5), (0.7, 0.4), (-0.2, 2.0)] {
            let (dr, da) = rhs(MacroState { tau: 0.0, r, a }, &s);
            let f_closed = a * (1.0 - r * r) * (1.0 - a * r);
            let g_closed = r - a * r * r;
            assert!((dr - f_closed).abs() < 1e-9 * (1.0 + f_closed.abs()));
            assert!((da - g_closed).abs() < 1e-9 * (1.0 + g_closed.abs()));
        }
        let traj = integrate(&s, 200.0, &IntegrateOptions::default()).unwrap();
        let end = traj.last_state();
        assert!(
            (end.r * end.a - 1.0).abs() < 1e-6,
            "should settle on a R = 1, got {}",
            end.r * end.a
        );
    }

    #[test]
    fn integrator_matches_independent_fixed_step_rk4() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 2.0);
        let traj = integrate(&s, 5.0, &IntegrateOptions::default()).unwrap();
        // independent oracle: classical RK4 with a tiny fixed step
        let mut y = [0.0f64, 2.0];
        let h = 1e-4;
        let n = (5.0 / h) as usize;
        let f = |y: &[f64; 2]| [rhs_r(&s, y[0], y[1]), rhs_a(&s, y[0], y[1])];
        for _ in 0..n {
            let k1 = f(&y);
            let k2 = f(&[y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f(&[y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f(&[y[0] + h * k3[0], y[1] + h * k3[1]]);
            y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        }
        let end = traj.last_state();
        assert!((end.r - y[0]).abs() < 1e-7, "{} vs {}", end.r, y[0]);
        assert!((end.a - y[1]).abs() < 1e-7, "{} vs {}", end.a, y[1]);
    }

    #[test]
    fn rhs_agrees_with_trajectory_finite_differences() {
        let s = spec(&[1.0; 5], &[1.0, -1.0, 1.0, -1.0, 1.0], 4.0);
        let h = 1e-4;
        let grid = vec![0.0, 5.0 - h, 5.0, 5.0 + h, 6.0];
        let opts = IntegrateOptions {
            sample_grid: Some(grid),
            ..Default::default()
        };
        let traj = integrate(&s, 6.0, &opts).unwrap();
        let (rm, r0, rp) = (traj.r[1], traj.r[2], traj.r[3]);
        let (am, a0, ap) = (traj.a[1], traj.a[2], traj.a[3]);
        let fd_r = (rp - rm) / (2.0 * h);
        let fd_a = (ap - am) / (2.0 * h);
        let (fr, fa) = rhs(
            MacroState {
                tau: 5.0,
                r: r0,
                a: a0,
            },
            &s,
        );
        assert!((fd_r - fr).abs() <= 1e-4 * (1.0 + fr.abs()), "{fd_r} vs {fr}");
        assert!((fd_a - fa).abs() <= 1e-4 * (1.0 + fa.abs()), "{fd_a} vs {fa}");
    }

    #[test]
    fn test_loss_examples() {
        let s = CoefficientSpec::new(vec![1.0, 0.5], vec![1.0, 0.5], 0.3, 1.0).unwrap();
        let l0 = test_loss(
            MacroState {
                tau: 0.0,
                r: 0.0,
                a: 0.0,
            },
            &s,
        );
        assert!((l0 - 0.5 * s.teacher_power() - 0.5 * 0.09).abs() < 1e-15);

        // pure linear teacher = student: zero loss at (R, a) = (1, 1)
        let lin = CoefficientSpec::new(vec![1.0, 1e-12], vec![1.0, 1e-12], 0.0, 1.0).unwrap();
        let l1 = test_loss(
            MacroState {
                tau: 0.0,
                r: 1.0,
                a: 1.0,
            },
            &lin,
        );
        assert!(l1.abs() < 1e-10);
    }

    #[test]
    fn loss_minimized_over_a_at_s_over_t() {
        let s = spec(&[1.0, 1.0, 1.0], &[1.0, -1.0, 1.0], 5.0);
        let r = 0.4;
        let best = s.series_s(r) / s.series_t(r);
        let at = |a: f64| {
            test_loss(
                MacroState {
                    tau: 0.0,
                    r,
                    a,
                },
                &s,
            )
        };
        // grid search oracle
        let mut grid_best = f64::INFINITY;
        let mut grid_arg = 0.0;
        for i in 0..4000 {
            let a = -10.0 + i as f64 * 0.005;
            let v = at(a);
            if v < grid_best {
                grid_best = v;
                grid_arg = a;
            }
        }
        assert!((grid_arg - best).abs() < 0.01, "{grid_arg} vs {best}");
    }

    #[test]
    fn loss_monotone_along_flow() {
        let s = spec(&[1.0; 5], &[1.0, -1.0, 1.0, -1.0, 1.0], 4.0);
        let traj = integrate(&s, 50.0, &IntegrateOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..traj.len() {
            let l = test_loss(traj.state(i), &s);
            assert!(l <= prev + 1e-7, "loss increased at tau={}", traj.tau[i]);
            prev = l;
        }
    }

    #[test]
    fn discrete_zero_steps_is_initial_state() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 3.0);
        let traj = integrate_discrete_macro(&s, 100, 1.0, 0, 1).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.r[0], 0.0);
        assert_eq!(traj.q.as_ref().unwrap()[0], 0.0);
        assert_eq!(traj.a[0], 3.0);
    }

    #[test]
    fn discrete_first_step_closed_form() {
        // from (0, 0, abar) only the k=0 term of the R drift survives:
        // R_1 = gamma/m * abar * c*_1 c_1, Q and a unchanged
        let s = spec(&[2.0, 1.0, 0.5], &[1.5, -1.0, 1.0], 3.0);
        let (m, gamma) = (250, 0.7);
        let traj = integrate_discrete_macro(&s, m, gamma, 1, 1).unwrap();
        let expect = gamma / m as f64 * 3.0 * (1.5 * 2.0);
        assert!((traj.r[1] - expect).abs() < 1e-16);
        assert_eq!(traj.q.as_ref().unwrap()[1], 0.0);
        assert_eq!(traj.a[1], 3.0);
    }

    #[test]
    fn discrete_tracks_ode_as_width_grows() {
        let s = spec(&[1.0; 5], &[1.0, -1.0, 1.0, -1.0, 1.0], 4.0);
        let tau_max = 5.0;
        let opts = IntegrateOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let mut sups = vec![];
        for &m in &[1000usize, 2000, 4000] {
            let steps = (tau_max * m as f64) as usize;
            let d = integrate_discrete_macro(&s, m, 1.0, steps, m / 100).unwrap();
            let grid = d.tau.clone();
            let o = integrate(
                &s,
                tau_max,
                &IntegrateOptions {
                    sample_grid: Some(grid.clone()),
                    ..opts.clone()
                },
            )
            .unwrap();
            // compare on shared grid
            let mut sup = 0.0f64;
            for (i, &t) in grid.iter().enumerate() {
                let j = o.tau.iter().position(|&x| (x - t).abs() < 1e-12).unwrap();
                sup = sup.max((d.r[i] - o.r[j]).abs());
            }
            sups.push(sup);
        }
        // halving with m (allow generous band)
        let s1 = (sups[0] / sups[1]).log2();
        let s2 = (sups[1] / sups[2]).log2();
        assert!(
            (0.7..1.3).contains(&s1) && (0.7..1.3).contains(&s2),
            "convergence ratios {s1} {s2} (sups {sups:?})"
        );
    }

    #[test]
    fn discrete_q_minus_r_squared_stays_small() {
        let s = spec(&[1.0; 5], &[1.0, -1.0, 1.0, -1.0, 1.0], 4.0);
        let (m, gamma) = (2000usize, 1.0);
        let traj = integrate_discrete_macro(&s, m, gamma, 20_000, 10).unwrap();
        let q = traj.q.as_ref().unwrap();
        let worst = traj
            .r
            .iter()
            .zip(q)
            .map(|(r, q)| (q - r * r).abs())
            .fold(0.0f64, f64::max);
        assert!(
            worst <= 10.0 * gamma / m as f64,
            "max |Q - R^2| = {worst} exceeds {}",
            10.0 * gamma / m as f64
        );
    }

    #[test]
    fn discrete_overflow_reported() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 1e9);
        // gamma/m huge: the Euler step explodes immediately
        let err = integrate_discrete_macro(&s, 2, 1e9, 100, 1).unwrap_err();
        match err {
            DiscreteError::Overflow { step } => assert!(step <= 10),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
