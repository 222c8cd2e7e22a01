//! The `validate` subcommand: numerical property suite over the configured
//! spec, printed as a pass/fail table. Exits nonzero on any failure.

use macrodyn::analysis::least_squares;
use macrodyn::config::RunConfig;
use macrodyn::fastslow;
use macrodyn::macro_ode::{self, IntegrateOptions, MacroState};
use macrodyn::coefficients::{CaseTag, CoefficientSpec};
use macrodyn::width_sim::{self, SgdConfig};

struct Row {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn skip(name: &'static str, why: &str) -> Row {
    Row {
        name,
        pass: true,
        detail: format!("skipped: {why}"),
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<(), ()> {
    let spec = &cfg.spec;
    let indices = spec.degree_indices();
    let mut rows = vec![];

    rows.push(initial_drift(spec));
    rows.push(q_r2_decay(spec));

    match fastslow::manifold_analysis(spec) {
        Ok(m) => {
            rows.push(manifold_residual(spec, &m));
            rows.push(branch_stability(spec, &m));
            if indices.case_tag == CaseTag::Neither {
                rows.push(skip("eigen_gap_slope", "spec satisfies neither case"));
                rows.push(skip("eigenvector_slope", "spec satisfies neither case"));
                rows.push(skip("alpha_asymptote", "spec satisfies neither case"));
            } else {
                let exp_gap = (indices.k0 + 1).min(2 * indices.k1) as f64 + 2.0;
                rows.push(spectral_slope(
                    spec,
                    &m,
                    "eigen_gap_slope",
                    exp_gap,
                    0.5,
                    |s| (s.lambda_s / s.lambda_f).abs(),
                ));
                rows.push(spectral_slope(spec, &m, "eigenvector_slope", 2.0, 0.3, |s| {
                    let v = s.v_f.unwrap_or([1.0, 0.0]);
                    (v[1] / v[0]).abs()
                }));
                rows.push(alpha_asymptote(spec, indices.k0, indices.k1));
            }
            rows.push(h_asymptote(spec));
        }
        Err(e) => rows.push(Row {
            name: "manifold_analysis",
            pass: false,
            detail: e.to_string(),
        }),
    }

    rows.push(gradient_check(spec));
    rows.push(loss_monotone(spec));

    let mut ok = true;
    println!("property suite for c = {:?}, c* = {:?}, a_init = {}",
        spec.c_student(), spec.c_teacher(), spec.a_init());
    for row in &rows {
        let tag = if row.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:<22} {}", row.name, row.detail);
        ok &= row.pass;
    }
    if ok {
        println!("all properties hold");
        Ok(())
    } else {
        println!("property suite FAILED");
        Err(())
    }
}

fn initial_drift(spec: &CoefficientSpec) -> Row {
    let abar = spec.a_init();
    let (dr, da) = macro_ode::rhs(
        MacroState {
            tau: 0.0,
            r: 0.0,
            a: abar,
        },
        spec,
    );
    let expect = abar * spec.c_teacher()[0] * spec.c_student()[0];
    let pass = da == 0.0 && (dr - expect).abs() <= 1e-14 * expect.abs();
    Row {
        name: "initial_drift",
        pass,
        detail: format!("dR = {dr:.6e} (expect {expect:.6e}), da = {da:.1e}"),
    }
}

fn q_r2_decay(spec: &CoefficientSpec) -> Row {
    let (m, gamma, steps) = (10_000usize, 1.0, 100_000usize);
    match macro_ode::integrate_discrete_macro(spec, m, gamma, steps, 50) {
        Ok(traj) => {
            let q = traj.q.as_ref().unwrap();
            let worst = traj
                .r
                .iter()
                .zip(q)
                .map(|(r, q)| (q - r * r).abs())
                .fold(0.0f64, f64::max);
            let bound = 10.0 * gamma / m as f64;
            Row {
                name: "q_r2_decay",
                pass: worst <= bound,
                detail: format!("max |Q - R^2| = {worst:.3e} (bound {bound:.1e})"),
            }
        }
        Err(e) => Row {
            name: "q_r2_decay",
            pass: false,
            detail: e.to_string(),
        },
    }
}

fn manifold_residual(spec: &CoefficientSpec, m: &fastslow::ManifoldAnalysis) -> Row {
    let mut worst = 0.0f64;
    for (i, &r) in m.branch.r.iter().enumerate() {
        let a = m.branch.h[i];
        let f = macro_ode::rhs_r(spec, r, a);
        let j = fastslow::jacobian(MacroState { tau: 0.0, r, a }, spec);
        worst = worst.max(f.abs() / (1.0 + j.f_a.abs()));
    }
    Row {
        name: "manifold_residual",
        pass: worst <= 1e-10,
        detail: format!("max |f(R, h(R))| / (1 + |f_a|) = {worst:.3e}"),
    }
}

fn branch_stability(spec: &CoefficientSpec, m: &fastslow::ManifoldAnalysis) -> Row {
    let bad = m
        .branch
        .r
        .iter()
        .enumerate()
        .find(|(i, &r)| {
            let j = fastslow::jacobian(
                MacroState {
                    tau: 0.0,
                    r,
                    a: m.branch.h[*i],
                },
                spec,
            );
            j.f_r >= 0.0
        })
        .map(|(_, &r)| r);
    Row {
        name: "branch_stability",
        pass: bad.is_none(),
        detail: match bad {
            None => "f_R < 0 along the whole branch".into(),
            Some(r) => format!("f_R >= 0 at R = {r}"),
        },
    }
}

fn spectral_slope(
    spec: &CoefficientSpec,
    m: &fastslow::ManifoldAnalysis,
    name: &'static str,
    expect: f64,
    tol: f64,
    value: impl Fn(&fastslow::SpectralSample) -> f64,
) -> Row {
    let hi = 0.1f64.min(0.6 * m.r_star);
    let lo = 0.01;
    if hi <= lo * 1.5 {
        return skip(name, "branch too short for the fit window");
    }
    let pts: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let r = lo * (hi / lo).powf(i as f64 / 39.0);
            let a = fastslow::h_of_r(spec, r);
            let s = fastslow::jacobian(MacroState { tau: 0.0, r, a }, spec);
            (r.ln(), value(&s).max(1e-300).ln())
        })
        .collect();
    let (slope, _r2) = least_squares(&pts);
    Row {
        name,
        pass: (slope - expect).abs() <= tol,
        detail: format!("slope {slope:.3} on [{lo}, {hi:.3}] (expect {expect} +- {tol})"),
    }
}

fn h_asymptote(spec: &CoefficientSpec) -> Row {
    let pts: Vec<(f64, f64)> = (0..30)
        .map(|i| {
            let r = 1e-3 * 10f64.powf(i as f64 / 29.0);
            (r.ln(), fastslow::h_of_r(spec, r).abs().ln())
        })
        .collect();
    let (slope, _) = least_squares(&pts);
    Row {
        name: "h_asymptote",
        pass: (slope + 1.0).abs() <= 0.02,
        detail: format!("h slope {slope:.4} on [1e-3, 1e-2] (expect -1 +- 2%)"),
    }
}

fn alpha_asymptote(spec: &CoefficientSpec, k0: usize, k1: usize) -> Row {
    let expect = (k0 + 1).min(2 * k1) as f64;
    let pts: Vec<(f64, f64)> = (0..30)
        .map(|i| {
            let r = 1e-3 * 10f64.powf(i as f64 / 29.0);
            (r.ln(), fastslow::alpha_of_r(spec, r).abs().max(1e-300).ln())
        })
        .collect();
    let (slope, _) = least_squares(&pts);
    Row {
        name: "alpha_asymptote",
        pass: (slope - expect).abs() <= 0.02 * expect,
        detail: format!("alpha slope {slope:.4} on [1e-3, 1e-2] (expect {expect} +- 2%)"),
    }
}

fn gradient_check(spec: &CoefficientSpec) -> Row {
    let cfg = SgdConfig {
        spec: spec.clone(),
        d: 20,
        n: 30,
        m: 5,
        gamma: 1.0,
        steps: 1,
        measure_every: 1,
        pair_sample: 0,
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let state = match width_sim::init_network(&cfg, seed) {
            Ok(s) => s,
            Err(e) => {
                return Row {
                    name: "gradient_check",
                    pass: false,
                    detail: e.to_string(),
                }
            }
        };
        let mut scratch = width_sim::Scratch::new(&cfg);
        width_sim::draw_batch(&cfg, &state, &mut scratch);
        let (gw, ga) = width_sim::batch_gradients(&cfg, &mut scratch, &state.w, &state.a);
        let h = 1e-6;
        for probe in 0..10usize {
            let idx = (probe * 37 + seed as usize * 13) % state.w.len();
            if probe % 2 == 0 {
                let mut wp = state.w.clone();
                wp[idx] += h;
                let lp = width_sim::batch_loss(&cfg, &scratch, &wp, &state.a);
                wp[idx] -= 2.0 * h;
                let lm = width_sim::batch_loss(&cfg, &scratch, &wp, &state.a);
                let fd = (lp - lm) / (2.0 * h);
                worst = worst.max((gw[idx] - fd).abs() / fd.abs().max(1e-8));
            } else {
                let ai = idx % state.a.len();
                let mut ap = state.a.clone();
                ap[ai] += h;
                let lp = width_sim::batch_loss(&cfg, &scratch, &state.w, &ap);
                ap[ai] -= 2.0 * h;
                let lm = width_sim::batch_loss(&cfg, &scratch, &state.w, &ap);
                let fd = (lp - lm) / (2.0 * h);
                worst = worst.max((ga[ai] - fd).abs() / fd.abs().max(1e-8));
            }
        }
    }
    Row {
        name: "gradient_check",
        pass: worst <= 1e-5,
        detail: format!("max relative error vs finite differences = {worst:.3e}"),
    }
}

fn loss_monotone(spec: &CoefficientSpec) -> Row {
    let traj = match macro_ode::integrate(spec, 20.0, &IntegrateOptions::default()) {
        Ok(t) => t,
        Err(e) => {
            return Row {
                name: "loss_monotone",
                pass: false,
                detail: e.to_string(),
            }
        }
    };
    let mut prev = f64::INFINITY;
    let mut worst_rise = 0.0f64;
    for i in 0..traj.len() {
        let l = macro_ode::test_loss(traj.state(i), spec);
        worst_rise = worst_rise.max(l - prev);
        prev = l;
    }
    Row {
        name: "loss_monotone",
        pass: worst_rise <= 1e-7,
        detail: format!("max loss increase along flow = {worst_rise:.3e}"),
    }
}
