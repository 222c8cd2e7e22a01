//! Ground-truth finite-width simulation: a real two-layer network trained
//! by normalized one-pass SGD on fresh Gaussian batches, plus measurement
//! of the empirical macroscopic variables for comparison with the theory.
//!
//! Reproducibility scheme: a master seed derives independent keys for the
//! data, label-noise, initialization and pair-sampling streams. Batch rows
//! are generated in fixed 64-row blocks, each from its own (key, step,
//! block) substream, so results are bit-identical regardless of how many
//! threads fill the buffers. Dense matrix products are the only
//! runtime-variable part and are single-threaded here.

use crate::coefficients::{activation_eval, activation_eval_fused, CoefficientSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_BLOCK: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("non-finite parameter at step {step}; max |gradient| = {max_grad:.3e}")]
    NonFinite { step: u64, max_grad: f64 },
}

/// Dimensions and schedule of one SGD run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    pub spec: CoefficientSpec,
    /// Input dimension.
    pub d: usize,
    /// Batch size; n/d is the aspect ratio delta.
    pub n: usize,
    /// Width.
    pub m: usize,
    pub gamma: f64,
    pub steps: usize,
    pub measure_every: usize,
    /// Number of unordered (i, j) pairs for the Q estimate.
    pub pair_sample: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.d < 2 || self.n < 2 {
            return Err(SimError::BadConfig(format!(
                "d and n must be at least 2, got d={} n={}",
                self.d, self.n
            )));
        }
        if self.m < 1 {
            return Err(SimError::BadConfig("width m must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(SimError::BadConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.measure_every == 0 {
            return Err(SimError::BadConfig("measure_every must be positive".into()));
        }
        let max_pairs = self.m * self.m.saturating_sub(1) / 2;
        if self.pair_sample > max_pairs {
            return Err(SimError::BadConfig(format!(
                "pair_sample {} exceeds m(m-1)/2 = {}",
                self.pair_sample, max_pairs
            )));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.n as f64 / self.d as f64
    }
}

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Independent named stream keys derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    data_key: u64,
    noise_key: u64,
    init_key: u64,
    pairs_key: u64,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = SplitMix(seed);
        Self {
            data_key: sm.next(),
            noise_key: sm.next(),
            init_key: sm.next(),
            pairs_key: sm.next(),
        }
    }
}

fn substream(key: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut sm = SplitMix(
        key ^ a.wrapping_mul(0xD1B5_4A32_D192_ED03)
            ^ b.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7),
    );
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&sm.next().to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn fill_normal_blocks(buf: &mut [f64], cols: usize, key: u64, step: u64) {
    buf.par_chunks_mut(ROW_BLOCK * cols)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = substream(key, step, block as u64);
            for v in chunk.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        });
}

/// First layer W (d x m, neuron-major), second layer a, teacher direction,
/// step counter and the seeded stream keys.
#[derive(Debug, Clone)]
pub struct NetworkState {
    /// Column-major d x m: neuron i occupies w[i*d .. (i+1)*d].
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub w_star: Vec<f64>,
    pub t: u64,
    pub d: usize,
    pub m: usize,
    pub streams: RngStreams,
}

impl NetworkState {
    pub fn neuron(&self, i: usize) -> &[f64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    /// Largest relative deviation of any neuron norm from sqrt(d).
    pub fn max_norm_deviation(&self) -> f64 {
        let target = (self.d as f64).sqrt();
        (0..self.m)
            .map(|i| {
                let n = norm(self.neuron(i));
                ((n - target) / target).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rescale_to_sqrt_d(v: &mut [f64]) {
    let d = v.len() as f64;
    let s = (d / v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    for x in v.iter_mut() {
        *x *= s;
    }
}

/// a = a_init on every neuron; neuron vectors and the teacher drawn
/// isotropically, then rescaled to radius sqrt(d) so R stays in [-1, 1]
/// exactly at finite d.
pub fn init_network(cfg: &SgdConfig, seed: u64) -> Result<NetworkState, SimError> {
    cfg.validate()?;
    let streams = RngStreams::from_seed(seed);
    let mut w = vec![0.0f64; cfg.d * cfg.m];
    fill_normal_blocks(&mut w, cfg.d, streams.init_key, 0);
    for i in 0..cfg.m {
        rescale_to_sqrt_d(&mut w[i * cfg.d..(i + 1) * cfg.d]);
    }
    let mut w_star = vec![0.0f64; cfg.d];
    let mut rng = substream(streams.init_key, 1, 0);
    for v in w_star.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    rescale_to_sqrt_d(&mut w_star);
    Ok(NetworkState {
        w,
        a: vec![cfg.spec.a_init(); cfg.m],
        w_star,
        t: 0,
        d: cfg.d,
        m: cfg.m,
        streams,
    })
}

/// Reusable per-step buffers; X alone is n*d doubles.
pub struct Scratch {
    x: Vec<f64>,        // n x d, row-major
    z_teach: Vec<f64>,  // n
    y: Vec<f64>,        // n
    z: Vec<f64>,        // n x m, row-major: pre-activations
    fval: Vec<f64>,     // n x m: sigma(z)
    dval: Vec<f64>,     // n x m: sigma'(z), later r_s a_i sigma'(z)
    resid: Vec<f64>,    // n
    gw: Vec<f64>,       // d x m, column-major
    ga: Vec<f64>,       // m
}

impl Scratch {
    pub fn new(cfg: &SgdConfig) -> Self {
        Self {
            x: vec![0.0; cfg.n * cfg.d],
            z_teach: vec![0.0; cfg.n],
            y: vec![0.0; cfg.n],
            z: vec![0.0; cfg.n * cfg.m],
            fval: vec![0.0; cfg.n * cfg.m],
            dval: vec![0.0; cfg.n * cfg.m],
            resid: vec![0.0; cfg.n],
            gw: vec![0.0; cfg.d * cfg.m],
            ga: vec![0.0; cfg.m],
        }
    }
}

/// Z = alpha X W; X is n x d row-major, W is d x m column-major,
/// Z is n x m row-major.
fn gemm_xw(n: usize, d: usize, m: usize, alpha: f64, x: &[f64], w: &[f64], z: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            n,
            d,
            m,
            alpha,
            x.as_ptr(),
            d as isize,
            1,
            w.as_ptr(),
            1,
            d as isize,
            0.0,
            z.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// G = alpha X^T M; X is n x d row-major (transposed via strides), M is
/// n x m row-major, G is d x m column-major.
fn gemm_xt_m(n: usize, d: usize, m: usize, alpha: f64, x: &[f64], mm: &[f64], g: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            d,
            n,
            m,
            alpha,
            x.as_ptr(),
            1,
            d as isize,
            mm.as_ptr(),
            m as isize,
            1,
            0.0,
            g.as_mut_ptr(),
            1,
            d as isize,
        );
    }
}

/// Draw the step-t batch: X (n x d) and labels y = sigma_star(X w*/sqrt(d))
/// + noise. Exposed for the gradient-correctness oracle.
pub fn draw_batch(cfg: &SgdConfig, state: &NetworkState, scratch: &mut Scratch) {
    let (n, d) = (cfg.n, cfg.d);
    fill_normal_blocks(&mut scratch.x[..n * d], d, state.streams.data_key, state.t);
    gemm_xw(
        n,
        d,
        1,
        1.0 / (d as f64).sqrt(),
        &scratch.x[..n * d],
        &state.w_star,
        &mut scratch.z_teach[..n],
    );
    let ct = cfg.spec.c_teacher();
    for (y, z) in scratch.y[..n].iter_mut().zip(&scratch.z_teach[..n]) {
        *y = activation_eval(ct, *z);
    }
    let sigma = cfg.spec.noise_sigma();
    if sigma > 0.0 {
        let mut rng = substream(state.streams.noise_key, state.t, 0);
        for y in scratch.y[..n].iter_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *y += sigma * xi;
        }
    }
}

/// Batch loss L = 1/(2n) sum_s (y_s - f(x_s))^2 as a pure function of the
/// weights, on the batch held in `scratch`. Used by the finite-difference
/// gradient oracle.
pub fn batch_loss(cfg: &SgdConfig, scratch: &Scratch, w: &[f64], a: &[f64]) -> f64 {
    let (n, d, m) = (cfg.n, cfg.d, cfg.m);
    let cs = cfg.spec.c_student();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut z = vec![0.0f64; n * m];
    gemm_xw(n, d, m, inv_sqrt_d, &scratch.x[..n * d], w, &mut z);
    let mut loss = 0.0;
    for s in 0..n {
        let mut fs = 0.0;
        for i in 0..m {
            fs += a[i] * activation_eval(cs, z[s * m + i]);
        }
        fs /= m as f64;
        let r = scratch.y[s] - fs;
        loss += r * r;
    }
    loss / (2.0 * n as f64)
}

/// Analytic batch gradients (nabla_W L, nabla_a L) at the current weights,
/// for the batch held in `scratch`. Matches finite differences of
/// [`batch_loss`]; the SGD updates below apply exactly these with the
/// gamma*d / gamma step scalings.
pub fn batch_gradients(
    cfg: &SgdConfig,
    scratch: &mut Scratch,
    w: &[f64],
    a: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, d, m) = (cfg.n, cfg.d, cfg.m);
    let cs = cfg.spec.c_student();
    let inv_m = 1.0 / m as f64;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    gemm_xw(n, d, m, inv_sqrt_d, &scratch.x[..n * d], w, &mut scratch.z[..n * m]);

    let fval = &mut scratch.fval[..n * m];
    let dval = &mut scratch.dval[..n * m];
    let zs = &scratch.z[..n * m];
    fval.par_chunks_mut(m)
        .zip(dval.par_chunks_mut(m))
        .zip(zs.par_chunks(m))
        .for_each(|((frow, drow), zrow)| {
            for i in 0..m {
                let (f, df) = activation_eval_fused(cs, zrow[i]);
                frow[i] = f;
                drow[i] = df;
            }
        });

    for s in 0..n {
        let mut fs = 0.0;
        for i in 0..m {
            fs += a[i] * fval[s * m + i];
        }
        scratch.resid[s] = scratch.y[s] - fs * inv_m;
    }

    // nabla_a L = -(1/(n m)) F^T r
    let coef_a = -1.0 / (n as f64 * m as f64);
    for i in 0..m {
        let mut acc = 0.0;
        for s in 0..n {
            acc += fval[s * m + i] * scratch.resid[s];
        }
        scratch.ga[i] = coef_a * acc;
    }

    // M_{s,i} = r_s a_i sigma'(z_{s,i}); nabla_W L = -(1/(n m sqrt d)) X^T M
    for s in 0..n {
        let r = scratch.resid[s];
        let row = &mut dval[s * m..(s + 1) * m];
        for (v, ai) in row.iter_mut().zip(a) {
            *v *= r * ai;
        }
    }
    let coef_w = -1.0 / (n as f64 * m as f64 * (d as f64).sqrt());
    gemm_xt_m(n, d, m, coef_w, &scratch.x[..n * d], dval, &mut scratch.gw);
    (scratch.gw.clone(), scratch.ga.clone())
}

/// One normalized SGD step: draw a fresh batch, compute both gradients at
/// the old weights, apply the simultaneous update
/// w~ = w - gamma d nabla_W L, a' = a - gamma nabla_a L, then rescale every
/// neuron back to radius sqrt(d).
pub fn sgd_step(
    state: &mut NetworkState,
    cfg: &SgdConfig,
    scratch: &mut Scratch,
) -> Result<(), SimError> {
    let (n, d, m) = (cfg.n, cfg.d, cfg.m);
    draw_batch(cfg, state, scratch);

    if cfg.gamma == 0.0 {
        state.t += 1;
        return Ok(());
    }

    let cs = cfg.spec.c_student();
    let inv_m = 1.0 / m as f64;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    gemm_xw(n, d, m, inv_sqrt_d, &scratch.x[..n * d], &state.w, &mut scratch.z[..n * m]);

    let fval = &mut scratch.fval[..n * m];
    let dval = &mut scratch.dval[..n * m];
    let zs = &scratch.z[..n * m];
    fval.par_chunks_mut(m)
        .zip(dval.par_chunks_mut(m))
        .zip(zs.par_chunks(m))
        .for_each(|((frow, drow), zrow)| {
            for i in 0..m {
                let (f, df) = activation_eval_fused(cs, zrow[i]);
                frow[i] = f;
                drow[i] = df;
            }
        });

    for s in 0..n {
        let mut fs = 0.0;
        for i in 0..m {
            fs += state.a[i] * fval[s * m + i];
        }
        scratch.resid[s] = scratch.y[s] - fs * inv_m;
    }

    // second-layer update coefficient: a += gamma/(n m) F^T r
    let coef_a = cfg.gamma / (n as f64 * m as f64);
    for i in 0..m {
        let mut acc = 0.0;
        for s in 0..n {
            acc += fval[s * m + i] * scratch.resid[s];
        }
        scratch.ga[i] = coef_a * acc;
    }

    // first-layer update: w += gamma sqrt(d)/(n m) X^T (r a sigma'(Z))
    for s in 0..n {
        let r = scratch.resid[s];
        let row = &mut dval[s * m..(s + 1) * m];
        for (v, ai) in row.iter_mut().zip(&state.a) {
            *v *= r * ai;
        }
    }
    let coef_w = cfg.gamma * (d as f64).sqrt() / (n as f64 * m as f64);
    gemm_xt_m(n, d, m, coef_w, &scratch.x[..n * d], dval, &mut scratch.gw);

    for i in 0..m {
        let col = &mut state.w[i * d..(i + 1) * d];
        let upd = &scratch.gw[i * d..(i + 1) * d];
        for (w, u) in col.iter_mut().zip(upd) {
            *w += u;
        }
        rescale_to_sqrt_d(col);
        state.a[i] += scratch.ga[i];
    }
    state.t += 1;

    let finite = state.a.iter().all(|v| v.is_finite())
        && state.w.iter().all(|v| v.is_finite());
    if !finite {
        let max_grad = scratch
            .gw
            .iter()
            .chain(scratch.ga.iter())
            .fold(0.0f64, |mx, v| mx.max(v.abs()));
        return Err(SimError::NonFinite {
            step: state.t,
            max_grad,
        });
    }
    Ok(())
}

/// Empirical macroscopic variables at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMeasurement {
    pub t: u64,
    pub tau: f64,
    pub r_bar: f64,
    pub r_std: f64,
    pub q_bar: f64,
    pub q_std: f64,
    pub a_bar: f64,
    pub a_std: f64,
}

/// Mean/std over neurons of (w* . w_i)/d and a_i, plus the mean overlap
/// (w_i . w_j)/d over `pair_sample` distinct unordered pairs.
pub fn measure_macro(state: &NetworkState, cfg: &SgdConfig) -> MacroMeasurement {
    let d = state.d as f64;
    let rs: Vec<f64> = (0..state.m)
        .map(|i| dot(&state.w_star, state.neuron(i)) / d)
        .collect();
    let (r_bar, r_std) = mean_std(&rs);
    let (a_bar, a_std) = mean_std(&state.a);

    let max_pairs = state.m * state.m.saturating_sub(1) / 2;
    let want = cfg.pair_sample.min(max_pairs);
    let (q_bar, q_std) = if want == 0 {
        (f64::NAN, f64::NAN)
    } else if want == max_pairs {
        let mut qs = Vec::with_capacity(max_pairs);
        for i in 0..state.m {
            for j in (i + 1)..state.m {
                qs.push(dot(state.neuron(i), state.neuron(j)) / d);
            }
        }
        mean_std(&qs)
    } else {
        let mut rng = substream(state.streams.pairs_key, state.t, 0);
        let mut seen = std::collections::HashSet::with_capacity(want * 2);
        let mut qs = Vec::with_capacity(want);
        while qs.len() < want {
            let i = rng.random_range(0..state.m);
            let j = rng.random_range(0..state.m);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                qs.push(dot(state.neuron(key.0), state.neuron(key.1)) / d);
            }
        }
        mean_std(&qs)
    };
    MacroMeasurement {
        t: state.t,
        tau: cfg.gamma * state.t as f64 / cfg.m as f64,
        r_bar,
        r_std,
        q_bar,
        q_std,
        a_bar,
        a_std,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Measured trajectory of one seeded run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdRun {
    pub seed: u64,
    pub measurements: Vec<MacroMeasurement>,
}

/// Loop sgd_step, measuring every `measure_every` steps (plus the initial
/// and final states).
pub fn run_sgd(cfg: &SgdConfig, seed: u64) -> Result<SgdRun, SimError> {
    cfg.validate()?;
    let mut state = init_network(cfg, seed)?;
    let mut scratch = Scratch::new(cfg);
    let mut measurements = vec![measure_macro(&state, cfg)];
    for step in 0..cfg.steps {
        sgd_step(&mut state, cfg, &mut scratch)?;
        if (step + 1) % cfg.measure_every == 0 || step + 1 == cfg.steps {
            measurements.push(measure_macro(&state, cfg));
        }
    }
    Ok(SgdRun { seed, measurements })
}
