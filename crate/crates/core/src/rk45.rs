//! Embedded Dormand-Prince 5(4) integrator with fourth-order dense output.
//!
//! Small fixed-dimension solver tailored to the two macroscopic systems in
//! this crate (the 2-d full dynamics and the 1-d reduced flow). Sampling is
//! pull-based: the caller supplies a sorted grid of output times and the
//! stepper evaluates the continuous extension inside each accepted step.

/// Why an integration ended.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    /// Hit the requested end time.
    Completed,
    /// A monitored component exceeded the blow-up bound. Carries (t, y) of
    /// the divergence point.
    BlowUp { t: f64, y: Vec<f64> },
    /// Adaptive step collapsed below the underflow floor; carries the last
    /// valid time.
    StepSizeUnderflow { t: f64 },
    /// A caller-supplied stop condition fired (e.g. the reduced flow left
    /// its branch). Carries (t, y) at the stop.
    EventStop { t: f64, y: Vec<f64> },
}

/// Counters and termination reason for one run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub termination: Termination,
}

pub struct Options<const N: usize> {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Reject an accepted step if the post-step clamp had to move the state
    /// farther than this.
    pub max_clamp: f64,
    /// Step-size underflow floor as a fraction of the span.
    pub underflow_fraction: f64,
}

impl<const N: usize> Default for Options<N> {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            max_clamp: 1e-8,
            underflow_fraction: 1e-14,
        }
    }
}

/// Outcome of a caller's per-step inspection.
pub enum StepControl {
    Continue,
    /// Stop integration after this accepted step.
    Stop,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Error coefficients e = b5 - b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense-output weights for the quartic continuous extension.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step's continuous extension on [t, t+h].
pub struct DenseSegment<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseSegment<N> {
    /// Evaluate at t inside [t0, t0+h].
    pub fn eval(&self, t: f64) -> [f64; N] {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - theta;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + th1 * (self.rcont[2][i]
                            + theta * (self.rcont[3][i] + th1 * self.rcont[4][i])));
        }
        out
    }
}

/// Integrate y' = rhs(t, y) from (t0, y0) to t_end.
///
/// `inspect` is called after every accepted step with the dense segment and
/// the new state; it can clamp the state (returning the clamp distance via
/// `clamp`), record samples, and stop the run. `blow_up` is checked on the
/// post-step state.
#[allow(clippy::too_many_arguments)]
pub fn integrate<const N: usize>(
    rhs: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Options<N>,
    clamp: &mut impl FnMut(&mut [f64; N]) -> f64,
    blow_up: &mut impl FnMut(&[f64; N]) -> bool,
    inspect: &mut impl FnMut(&DenseSegment<N>, f64, &[f64; N]) -> StepControl,
) -> StepStats {
    let span = t_end - t0;
    assert!(span >= 0.0, "integration span must be nonnegative");
    let mut stats = StepStats {
        accepted: 0,
        rejected: 0,
        termination: Termination::Completed,
    };
    if span == 0.0 {
        return stats;
    }
    let h_floor = opts.underflow_fraction * span;

    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);

    // initial step: small fraction of the span, shrunk if the slope is steep
    let f0 = norm_inf(&k1);
    let mut h = (1e-4 * span).min(1e-2 / (1.0 + f0)).max(h_floor * 2.0);

    let mut k = [[0.0; N]; 7];
    loop {
        if t + h >= t_end {
            h = t_end - t;
        }
        k[0] = k1;
        let mut stage = |coeffs: &[f64], ci: f64, k: &[[f64; N]; 7]| -> [f64; N] {
            let mut ys = y;
            for (j, aij) in coeffs.iter().enumerate() {
                for i in 0..N {
                    ys[i] += h * aij * k[j][i];
                }
            }
            rhs(t + ci * h, &ys)
        };
        k[1] = stage(&A2, C[1], &k);
        k[2] = stage(&A3, C[2], &k);
        k[3] = stage(&A4, C[3], &k);
        k[4] = stage(&A5, C[4], &k);
        k[5] = stage(&A6, C[5], &k);
        // 5th-order solution (FSAL: A7 are also the b weights)
        let mut y_new = y;
        for (j, a7j) in A7.iter().enumerate() {
            for i in 0..N {
                y_new[i] += h * a7j * k[j][i];
            }
        }
        k[6] = rhs(t + h, &y_new);

        // scaled error norm
        let mut err = 0.0f64;
        for i in 0..N {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                e += ej * k[j][i];
            }
            e *= h;
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            err += (e / scale) * (e / scale);
        }
        err = (err / N as f64).sqrt();

        if err <= 1.0 {
            // clamp before accepting; an overshoot beyond the allowance is
            // treated as a failed step
            let mut y_clamped = y_new;
            let clamp_dist = clamp(&mut y_clamped);
            if clamp_dist > opts.max_clamp {
                stats.rejected += 1;
                h *= 0.5;
                if h < h_floor {
                    stats.termination = Termination::StepSizeUnderflow { t };
                    return stats;
                }
                continue;
            }

            stats.accepted += 1;
            let seg = make_dense(&y, &y_new, &k, h, t);
            t += h;
            y = y_clamped;
            k1 = if clamp_dist > 0.0 { rhs(t, &y) } else { k[6] };

            if blow_up(&y) {
                stats.termination = Termination::BlowUp { t, y: y.to_vec() };
                let _ = inspect(&seg, t, &y);
                return stats;
            }
            match inspect(&seg, t, &y) {
                StepControl::Continue => {}
                StepControl::Stop => {
                    stats.termination = Termination::EventStop { t, y: y.to_vec() };
                    return stats;
                }
            }
            if t >= t_end {
                return stats;
            }
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 10.0);
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0).min(0.9);
        }
        if h < h_floor {
            stats.termination = Termination::StepSizeUnderflow { t };
            return stats;
        }
    }
}

fn make_dense<const N: usize>(
    y: &[f64; N],
    y_new: &[f64; N],
    k: &[[f64; N]; 7],
    h: f64,
    t: f64,
) -> DenseSegment<N> {
    let mut rcont = [[0.0; N]; 5];
    for i in 0..N {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        rcont[0][i] = y[i];
        rcont[1][i] = ydiff;
        rcont[2][i] = bspl;
        rcont[3][i] = ydiff - h * k[6][i] - bspl;
        let mut acc = 0.0;
        for (j, dj) in D.iter().enumerate() {
            acc += dj * k[j][i];
        }
        rcont[4][i] = h * acc;
    }
    DenseSegment { t0: t, h, rcont }
}

fn norm_inf<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Log-spaced sample grid: `{0} ∪ {lo … hi}` with `per_decade` points per
/// decade. The zero point anchors the initial condition.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && per_decade > 0);
    let mut grid = vec![0.0];
    if hi <= lo {
        if hi > 0.0 {
            grid.push(hi);
        }
        return grid;
    }
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    let step = decades / n as f64;
    for i in 0..=n {
        grid.push(lo * 10f64.powf(i as f64 * step));
    }
    *grid.last_mut().unwrap() = hi;
    grid
}
