//! Moment-method control synthesis.
//!
//! A control `v` on `(0, T)` steers the jump system when
//! `integral_0^T v(t) e^{i lambda_k t} dt = d_k` for every mode. The
//! synthesis builds `W(xi) = sum_n c_n g_n(xi)` with
//! `g_n(xi) = Psi_n(-xi) H(xi + lambda_n)`, where `Psi_n` vanishes at every
//! other frequency and `H` is an entire window of exponential type `T/2`,
//! and recovers `v` by an inverse Fourier transform. A Gramian solve gives
//! the minimal-norm solution of the same truncated moment equations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::fit::{log_envelope, stretched_fit, StretchedFit};
use crate::pde::pair_with;
use crate::signal::TimeSignal;
use crate::spectral::{solve_frequencies, Spectrum, DEFAULT_SLOPE_THRESHOLD};
use crate::C64;

/// Default number of positive frequencies used in the products.
pub const DEFAULT_NPROD: usize = 200;

/// `exp(-nu^mu / (1-t)^mu - nu^mu / (1+t)^mu)`, zero for `|t| >= 1`.
pub fn sigma(t: f64, nu: f64, mu: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let a = nu.powf(mu);
    (-a / (1.0 - t).powf(mu) - a / (1.0 + t).powf(mu)).exp()
}

/// Parameters of the window `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub mu: f64,
    pub nu: f64,
    pub beta: f64,
    pub gamma_param: f64,
    /// Normalizer making `H(0) = 1`; filled in by [`Window::new`].
    pub alpha0: f64,
}

impl WindowParams {
    /// `beta = T/2`, `nu = gamma / beta`, `mu = 1/2`.
    pub fn new(horizon: f64, gamma_param: f64) -> Self {
        let beta = horizon / 2.0;
        WindowParams {
            mu: 0.5,
            nu: gamma_param / beta,
            beta,
            gamma_param,
            alpha0: f64::NAN,
        }
    }
}

/// `H(z) = alpha0 * integral_{-1}^{1} sigma(t) e^{-i beta z t} dt`,
/// evaluated by the trapezoid rule. `sigma` is flat to all orders at
/// `t = +-1`, so the rule converges faster than any power of the spacing
/// once the oscillation `beta |z|` is resolved.
#[derive(Debug, Clone)]
pub struct Window {
    pub params: WindowParams,
    /// Positive nodes `t_i`.
    nodes: Vec<f64>,
    /// `2 * alpha0 * sigma(t_i) * dt` for the positive nodes.
    weights: Vec<f64>,
    /// `alpha0 * sigma(0) * dt`.
    center: f64,
    /// Largest `|x|` the rule was validated for.
    pub x_max: f64,
    /// Estimated absolute quadrature error over `[0, x_max]`.
    pub error_estimate: f64,
}

impl Window {
    /// Build a window whose quadrature is resolved for `|Re z| <= x_max`.
    pub fn new(params: WindowParams, x_max: f64) -> Result<Window> {
        let mut half = ((2.0 * params.beta * x_max).ceil() as usize).max(2000);
        let mut last_err = f64::INFINITY;
        for _ in 0..6 {
            let w = Window::with_nodes(params, half, x_max);
            let coarse = Window::with_nodes(params, half / 2, x_max);
            let err = (0..=16)
                .map(|i| {
                    let x = x_max * i as f64 / 16.0;
                    (w.h_real(x) - coarse.h_real(x)).abs()
                })
                .fold(0.0, f64::max);
            last_err = err;
            if err <= 1e-12 {
                return Ok(Window {
                    error_estimate: err,
                    ..w
                });
            }
            half *= 2;
        }
        Err(KdvError::Quadrature { estimate: last_err })
    }

    fn with_nodes(params: WindowParams, half: usize, x_max: f64) -> Window {
        let dt = 1.0 / half as f64;
        let nodes: Vec<f64> = (1..half).map(|i| i as f64 * dt).collect();
        let s0 = sigma(0.0, params.nu, params.mu);
        let raw: Vec<f64> = nodes
            .iter()
            .map(|&t| sigma(t, params.nu, params.mu))
            .collect();
        let total = dt * (s0 + 2.0 * raw.iter().sum::<f64>());
        let alpha0 = 1.0 / total;
        Window {
            params: WindowParams { alpha0, ..params },
            weights: raw.iter().map(|s| 2.0 * alpha0 * s * dt).collect(),
            center: alpha0 * s0 * dt,
            nodes,
            x_max,
            error_estimate: 0.0,
        }
    }

    /// `H(x)` for real `x` (real and even).
    pub fn h_real(&self, x: f64) -> f64 {
        let bx = self.params.beta * x;
        self.center
            + self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(t, w)| w * (bx * t).cos())
                .sum::<f64>()
    }

    /// `H(z)` for complex `z`.
    pub fn h(&self, z: C64) -> C64 {
        let bz = z * self.params.beta;
        let mut acc = C64::new(self.center, 0.0);
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += (bz * *t).cos() * *w;
        }
        acc
    }
}

/// `H(x)` with a freshly built window; see [`Window`].
pub fn window_h(z: C64, params: WindowParams) -> Result<C64> {
    Window::new(params, z.re.abs().max(1.0)).map(|w| w.h(z))
}

/// Symmetric list of frequencies `lambda_{+-k}` used in the products,
/// extended beyond the computed values by `lambda_k = a k^3`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub positive: Vec<f64>,
    /// Leading coefficient for the extension.
    pub a: f64,
}

impl FrequencyTable {
    /// `a` is fitted on the upper half of the list, where the cubic law is
    /// most accurate.
    pub fn new(positive: Vec<f64>) -> Self {
        let start = positive.len() / 2;
        let (num, den) =
            positive
                .iter()
                .enumerate()
                .skip(start)
                .fold((0.0, 0.0), |(n, d), (i, &l)| {
                    let k3 = ((i + 1) as f64).powi(3);
                    (n + l * k3, d + k3 * k3)
                });
        FrequencyTable {
            positive,
            a: num / den,
        }
    }

    pub fn lambda(&self, k: i32) -> f64 {
        let m = k.unsigned_abs() as usize;
        let v = if m <= self.positive.len() {
            self.positive[m - 1]
        } else {
            self.a * (m as f64).powi(3)
        };
        v * k.signum() as f64
    }

    /// Smallest distance between any two of `lambda_{+-1..+-K}`.
    pub fn min_gap(&self, count: usize) -> f64 {
        let mut g = 2.0 * self.positive[0];
        for k in 1..count.min(self.positive.len()) {
            g = g.min(self.positive[k] - self.positive[k - 1]);
        }
        g
    }
}

/// Frequencies `lambda_1..lambda_{N_prod}` of `A_m` on `(0, L)`.
pub fn frequency_table(length: f64, nprod: usize) -> Result<FrequencyTable> {
    Ok(FrequencyTable::new(solve_frequencies(length, nprod)?))
}

/// Product value with an estimate of the omitted tail `|k| > N_prod`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductValue {
    pub value: C64,
    pub tail_estimate: f64,
}

/// Relative size of the omitted factors of `Psi_n` at distance `w` from
/// `lambda_n`, using `lambda_k ~ a k^3` beyond `N_prod` and pairing `+-k`.
fn product_tail(w: f64, lambda_n: f64, a: f64, nprod: usize) -> f64 {
    let s = 1.0 / (5.0 * a * a * (nprod as f64).powi(5));
    w * 2.0 * lambda_n.abs() * s + w * w * s
}

/// `Psi_n(z) = prod_{k != n, |k| <= N_prod} (lambda_k - z) / (lambda_k - lambda_n)`.
pub fn product_psi(n: i32, z: C64, table: &FrequencyTable, nprod: usize) -> ProductValue {
    let ln = table.lambda(n);
    let mut value = C64::new(1.0, 0.0);
    for m in 1..=nprod as i32 {
        for k in [m, -m] {
            if k != n {
                let lk = table.lambda(k);
                value *= (C64::new(lk, 0.0) - z) / (lk - ln);
            }
        }
    }
    ProductValue {
        value,
        tail_estimate: product_tail((z - ln).norm(), ln, table.a, nprod),
    }
}

/// `Phi_n(z) = prod_{k != n} (1 - z / (lambda_k - lambda_n)) = Psi_n(z + lambda_n)`.
pub fn product_phi(n: i32, z: C64, table: &FrequencyTable, nprod: usize) -> ProductValue {
    product_psi(n, z + table.lambda(n), table, nprod)
}

fn psi_real(n: i32, x: f64, table: &FrequencyTable, nprod: usize) -> f64 {
    let ln = table.lambda(n);
    let mut v = 1.0;
    for m in 1..=nprod as i32 {
        for k in [m, -m] {
            if k != n {
                let lk = table.lambda(k);
                v *= (lk - x) / (lk - ln);
            }
        }
    }
    v
}

/// `g_n(z) = Psi_n(-z) H(z + lambda_n)`.
pub fn g_fun(n: i32, z: C64, table: &FrequencyTable, window: &Window, nprod: usize) -> C64 {
    product_psi(n, -z, table, nprod).value * window.h(z + table.lambda(n))
}

/// Real-axis specialization of [`g_fun`].
pub fn g_real(n: i32, xi: f64, table: &FrequencyTable, window: &Window, nprod: usize) -> f64 {
    psi_real(n, -xi, table, nprod) * window.h_real(xi + table.lambda(n))
}

// ---------------------------------------------------------------------------
// Moment problems

/// Link between a target and the data that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: i32,
    /// `p_k(y) = integral phi_k y dx` (unconjugated pairing).
    pub projection: C64,
    pub slope_l: C64,
}

/// `integral_0^T v(t) e^{i lambda_k t} dt = d_k` for each listed `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProblem {
    pub horizon: f64,
    pub indices: Vec<i32>,
    pub frequencies: Vec<f64>,
    pub targets: Vec<C64>,
    pub provenance: Vec<Provenance>,
}

impl MomentProblem {
    pub fn max_target(&self) -> f64 {
        self.targets.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    /// Same frequencies, targets scaled by `s`.
    pub fn scaled(&self, s: f64) -> MomentProblem {
        MomentProblem {
            targets: self.targets.iter().map(|d| d * s).collect(),
            ..self.clone()
        }
    }
}

fn check_conjugate_symmetry(p: &MomentProblem) -> Result<()> {
    let scale = p.max_target().max(1e-300);
    for (i, &k) in p.indices.iter().enumerate() {
        if let Some(j) = p.indices.iter().position(|&q| q == -k) {
            let err = (p.targets[j] - p.targets[i].conj()).norm();
            if err > 1e-12 * scale {
                return Err(KdvError::InvalidInput(format!(
                    "targets not conjugate-symmetric at k = {k} ({err:e})"
                )));
            }
        }
    }
    Ok(())
}

fn build_problem(
    y: &[f64],
    spec: &Spectrum,
    horizon: f64,
    h: f64,
    target: impl Fn(C64, &crate::spectral::EigenMode) -> C64,
) -> Result<MomentProblem> {
    let xs: Vec<f64> = (1..=y.len()).map(|j| j as f64 * h).collect();
    let mut problem = MomentProblem {
        horizon,
        indices: vec![],
        frequencies: vec![],
        targets: vec![],
        provenance: vec![],
    };
    for m in &spec.modes {
        if m.slope_l.norm() < DEFAULT_SLOPE_THRESHOLD {
            return Err(KdvError::DegenerateSlope {
                k: m.k,
                slope: m.slope_l.norm(),
            });
        }
        let p = pair_with(y, &m.sample(&xs), h);
        problem.indices.push(m.k);
        problem.frequencies.push(m.lambda);
        problem.targets.push(target(p, m));
        problem.provenance.push(Provenance {
            k: m.k,
            projection: p,
            slope_l: m.slope_l,
        });
    }
    check_conjugate_symmetry(&problem)?;
    Ok(problem)
}

/// Null-control targets `d_k = -p_k(y0) / phi_k'(L)` for a real interior
/// grid function `y0` with spacing `h`.
pub fn assemble_moment_problem(
    y0: &[f64],
    spec: &Spectrum,
    horizon: f64,
    h: f64,
) -> Result<MomentProblem> {
    build_problem(y0, spec, horizon, h, |p, m| -p / m.slope_l)
}

/// Reachability targets from zero: `d_k = e^{i lambda_k T} p_k(y_T) / phi_k'(L)`.
pub fn assemble_reach_problem(
    y_target: &[f64],
    spec: &Spectrum,
    horizon: f64,
    h: f64,
) -> Result<MomentProblem> {
    build_problem(y_target, spec, horizon, h, |p, m| {
        C64::from_polar(1.0, m.lambda * horizon) * p / m.slope_l
    })
}

// ---------------------------------------------------------------------------
// Window synthesis

/// Knobs of [`synthesize_control`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSettings {
    pub nprod: usize,
    /// Half-width `X` of the band around each `-lambda_n` where `g_n` is
    /// sampled; `None` selects four times the minimal frequency gap.
    pub envelope_halfwidth: Option<f64>,
    pub tail_bound: f64,
    pub imag_bound: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            nprod: DEFAULT_NPROD,
            envelope_halfwidth: None,
            tail_bound: 1e-6,
            imag_bound: 1e-6,
        }
    }
}

impl SynthesisSettings {
    pub fn halfwidth(&self, table: &FrequencyTable, count: usize) -> f64 {
        self.envelope_halfwidth
            .unwrap_or_else(|| 4.0 * table.min_gap(count))
    }
}

/// Audit data of one synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisAudit {
    pub xi_max: f64,
    pub dxi: f64,
    pub dt: f64,
    pub steps: usize,
    pub fft_len: usize,
    pub envelope_halfwidth: f64,
    /// Fraction of `integral |w|^2` outside `[-T/2 - 2dt, T/2 + 2dt]`.
    pub tail_mass: f64,
    /// `max |Im v| / max |Re v|` before realification.
    pub imag_ratio: f64,
}

/// Number of time steps of a synthesized signal: the Nyquist frequency
/// `pi/dt` must cover `lambda_K + X`.
pub fn window_steps(horizon: f64, lambda_max: f64, halfwidth: f64) -> usize {
    let n = (horizon * (lambda_max + halfwidth) / PI).ceil() as usize;
    (n + n % 2).max(16)
}

/// Inverse-transform synthesis of a control solving `problem`.
pub fn synthesize_control(
    problem: &MomentProblem,
    table: &FrequencyTable,
    window: &Window,
    settings: &SynthesisSettings,
) -> Result<(TimeSignal, SynthesisAudit)> {
    let horizon = problem.horizon;
    let count = problem
        .indices
        .iter()
        .map(|k| k.unsigned_abs() as usize)
        .max()
        .unwrap_or(1);
    let x = settings.halfwidth(table, count);
    let lambda_max = problem
        .frequencies
        .iter()
        .fold(0.0f64, |m, l| m.max(l.abs()));
    let steps = window_steps(horizon, lambda_max, x);
    let dt = horizon / steps as f64;
    let m_len = (4 * steps).next_power_of_two();
    let dxi = 2.0 * PI / (m_len as f64 * dt);
    let xi_max = lambda_max + x;
    if window.x_max < x * (1.0 - 1e-12) {
        return Err(KdvError::InvalidInput(format!(
            "window resolved up to {} but band needs {x}",
            window.x_max
        )));
    }

    // c_n = e^{-i lambda_n T/2} d_n; accumulate c_n g_n(xi_m) over each band.
    let contributions: Vec<Vec<(i64, C64)>> = problem
        .indices
        .par_iter()
        .zip(problem.targets.par_iter())
        .filter(|(_, d)| d.norm() > 0.0)
        .map(|(&n, &d)| {
            let ln = table.lambda(n);
            let c = C64::from_polar(1.0, -ln * horizon / 2.0) * d;
            let lo = ((-ln - x) / dxi).ceil() as i64;
            let hi = ((-ln + x) / dxi).floor() as i64;
            (lo..=hi)
                .map(|m| {
                    (
                        m,
                        c * g_real(n, m as f64 * dxi, table, window, settings.nprod),
                    )
                })
                .collect()
        })
        .collect();
    let mut spectrum = vec![C64::new(0.0, 0.0); m_len];
    for band in contributions {
        for (m, val) in band {
            spectrum[m.rem_euclid(m_len as i64) as usize] += val;
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(m_len).process(&mut spectrum);
    let scale = dxi / (2.0 * PI);
    let w: Vec<C64> = spectrum.iter().map(|z| z * scale).collect();

    let half = steps as i64 / 2;
    let support = horizon / 2.0 + 2.0 * dt;
    let (mut total, mut outside) = (0.0, 0.0);
    for (j, z) in w.iter().enumerate() {
        let jj = if j < m_len / 2 {
            j as i64
        } else {
            j as i64 - m_len as i64
        };
        let e = z.norm_sqr();
        total += e;
        if (jj as f64 * dt).abs() > support {
            outside += e;
        }
    }
    let tail_mass = if total > 0.0 { outside / total } else { 0.0 };
    let values: Vec<C64> = (0..=steps as i64)
        .map(|n| w[(n - half).rem_euclid(m_len as i64) as usize])
        .collect();
    let signal = TimeSignal {
        horizon,
        values,
        max_imag_ratio: 0.0,
    };
    let imag_ratio = signal.imag_ratio();
    let audit = SynthesisAudit {
        xi_max,
        dxi,
        dt,
        steps,
        fft_len: m_len,
        envelope_halfwidth: x,
        tail_mass,
        imag_ratio,
    };
    if tail_mass > settings.tail_bound {
        return Err(KdvError::SupportViolation {
            tail: tail_mass,
            bound: settings.tail_bound,
        });
    }
    if imag_ratio > settings.imag_bound {
        return Err(KdvError::ImaginaryResidue {
            ratio: imag_ratio,
            bound: settings.imag_bound,
        });
    }
    Ok((signal.realified(), audit))
}

// ---------------------------------------------------------------------------
// Gramian oracle

/// Knobs of [`minimal_norm_control`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramSettings {
    pub cond_cap: f64,
    /// Number of time steps of the sampled control; `None` picks
    /// `dt <= 1 / (2 lambda_max)`.
    pub steps: Option<usize>,
}

impl Default for GramSettings {
    fn default() -> Self {
        GramSettings {
            cond_cap: 1e12,
            steps: None,
        }
    }
}

/// Default sampling of a Gramian control: `dt <= 1/(2 lambda_max)`, which
/// keeps the trapezoid error of the cross moments below `1e-6` relative.
pub fn gram_steps(horizon: f64, lambda_max: f64) -> usize {
    let n = (2.0 * horizon * lambda_max).ceil() as usize;
    (n + n % 2).max(2000)
}

/// Gram matrix `G_kj = integral_0^T e^{i (lambda_k - lambda_j) t} dt`.
pub fn gram_matrix(freqs: &[f64], horizon: f64) -> DMatrix<C64> {
    let n = freqs.len();
    DMatrix::from_fn(n, n, |k, j| {
        let d = freqs[k] - freqs[j];
        if k == j || d == 0.0 {
            C64::new(horizon, 0.0)
        } else {
            (C64::new(0.0, d * horizon).exp() - 1.0) / C64::new(0.0, d)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub cond: f64,
    /// `v(t) = sum_j a_j e^{-i lambda_j t}`.
    pub coefficients: Vec<C64>,
    /// Exact `||v||_{L2(0,T)}` of the continuous exponential sum.
    pub exact_norm: f64,
}

/// Minimal-norm solution `v = sum_j a_j e^{-i lambda_j t}`, `G a = d`.
pub fn minimal_norm_control(
    problem: &MomentProblem,
    settings: &GramSettings,
) -> Result<(TimeSignal, GramReport)> {
    let horizon = problem.horizon;
    let g = gram_matrix(&problem.frequencies, horizon);
    let eig = g.clone().symmetric_eigen();
    let (emin, emax) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    if !(emin > 0.0) {
        return Err(KdvError::NotPositiveDefinite);
    }
    let cond = emax / emin;
    if cond > settings.cond_cap {
        return Err(KdvError::IllConditioned {
            cond,
            cap: settings.cond_cap,
        });
    }
    let chol = g.clone().cholesky().ok_or(KdvError::NotPositiveDefinite)?;
    let d = DVector::from_vec(problem.targets.clone());
    let mut a = chol.solve(&d);
    let r = &d - &g * &a;
    a += chol.solve(&r);
    let exact_norm = (a.adjoint() * &g * &a)[(0, 0)].re.max(0.0).sqrt();

    let lambda_max = problem
        .frequencies
        .iter()
        .fold(0.0f64, |m, l| m.max(l.abs()));
    let steps = settings
        .steps
        .unwrap_or_else(|| gram_steps(horizon, lambda_max));
    let coeffs: Vec<C64> = a.iter().copied().collect();
    let freqs = problem.frequencies.clone();
    let signal = TimeSignal::from_fn(horizon, steps, |t| {
        coeffs
            .iter()
            .zip(&freqs)
            .map(|(c, l)| c * C64::from_polar(1.0, -l * t))
            .sum()
    });
    let signal = signal.realified();
    Ok((
        signal,
        GramReport {
            cond,
            coefficients: a.iter().copied().collect(),
            exact_norm,
        },
    ))
}

// ---------------------------------------------------------------------------
// Verification and calibration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `(k, |integral v e^{i lambda_k t} dt - d_k|)`.
    pub residuals: Vec<(i32, f64)>,
    pub max_residual: f64,
    /// `(k, |integral v e^{i lambda_k t} dt|)` for the optional tail band.
    pub tail_band: Vec<(i32, f64)>,
}

/// `integral_0^T v(t) e^{i lambda t} dt` by the trapezoid rule.
pub fn signal_moment(v: &TimeSignal, lambda: f64) -> C64 {
    let dt = v.dt();
    let n = v.values.len();
    let mut acc = C64::new(0.0, 0.0);
    for (i, z) in v.values.iter().enumerate() {
        let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        acc += z * C64::from_polar(w, lambda * i as f64 * dt);
    }
    acc * dt
}

/// Residuals of the moment equations, plus moments on a tail band
/// `(k, lambda_k)` beyond the truncation.
pub fn verify_moments(
    v: &TimeSignal,
    problem: &MomentProblem,
    tail: &[(i32, f64)],
) -> MomentReport {
    let residuals: Vec<(i32, f64)> = problem
        .indices
        .iter()
        .zip(&problem.frequencies)
        .zip(&problem.targets)
        .map(|((&k, &l), &d)| (k, (signal_moment(v, l) - d).norm()))
        .collect();
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    let tail_band = tail
        .iter()
        .map(|&(k, l)| (k, signal_moment(v, l).norm()))
        .collect();
    MomentReport {
        residuals,
        max_residual,
        tail_band,
    }
}

/// One step of the gamma search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub gamma: f64,
    /// `max |g_n(-lambda_k) - delta_nk|`.
    pub interpolation_error: f64,
    /// `max_n` of `|g_n|` on the outer tenth of the band over its band maximum.
    pub envelope_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: WindowParams,
    pub trace: Vec<CalibrationStep>,
}

/// Interpolation error of `g_n(-lambda_k)` over the indices of `problem`.
pub fn interpolation_error(
    indices: &[i32],
    table: &FrequencyTable,
    window: &Window,
    nprod: usize,
) -> f64 {
    indices
        .par_iter()
        .map(|&n| {
            indices
                .iter()
                .map(|&k| {
                    let g = g_fun(n, C64::new(-table.lambda(k), 0.0), table, window, nprod);
                    let delta = if n == k { 1.0 } else { 0.0 };
                    (g - delta).norm()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Edge-to-peak ratio of `|g_n|` on `|xi + lambda_n| <= X`, maximized over `n`.
pub fn envelope_ratio(
    indices: &[i32],
    table: &FrequencyTable,
    window: &Window,
    nprod: usize,
    x: f64,
) -> f64 {
    let samples = 4000;
    indices
        .par_iter()
        .map(|&n| {
            let ln = table.lambda(n);
            let (mut peak, mut edge) = (0.0f64, 0.0f64);
            for i in 0..=samples {
                let s = -x + 2.0 * x * i as f64 / samples as f64;
                let g = g_real(n, s - ln, table, window, nprod).abs();
                peak = peak.max(g);
                if s.abs() >= 0.9 * x {
                    edge = edge.max(g);
                }
            }
            edge / peak
        })
        .reduce(|| 0.0, f64::max)
}

/// Maximal number of doublings tried by [`calibrate_gamma`].
pub const MAX_DOUBLINGS: usize = 20;

/// Double `gamma` from `start` until the multipliers interpolate to `1e-8`
/// and `|g_n|` has decayed by `1e-10` at the edge of its sampling band.
pub fn calibrate_gamma(
    problem: &MomentProblem,
    table: &FrequencyTable,
    start: f64,
    settings: &SynthesisSettings,
) -> Result<Calibration> {
    if !(start > 0.0) {
        return Err(KdvError::InvalidInput(
            "gamma start must be positive".into(),
        ));
    }
    let count = problem
        .indices
        .iter()
        .map(|k| k.unsigned_abs() as usize)
        .max()
        .unwrap_or(1);
    let x = settings.halfwidth(table, count);
    let mut trace = Vec::new();
    let mut gamma = start;
    for _ in 0..=MAX_DOUBLINGS {
        let window = Window::new(WindowParams::new(problem.horizon, gamma), x)?;
        let step = evaluate_gamma(&problem.indices, table, &window, settings.nprod, x);
        trace.push(step);
        if step.passed {
            return Ok(Calibration {
                params: window.params,
                trace,
            });
        }
        gamma *= 2.0;
    }
    Err(KdvError::CalibrationFailed {
        doublings: MAX_DOUBLINGS,
        gamma: gamma / 2.0,
    })
}

/// Pass/fail data of one candidate window.
pub fn evaluate_gamma(
    indices: &[i32],
    table: &FrequencyTable,
    window: &Window,
    nprod: usize,
    x: f64,
) -> CalibrationStep {
    let interp = interpolation_error(indices, table, window, nprod);
    let env = envelope_ratio(indices, table, window, nprod, x);
    CalibrationStep {
        gamma: window.params.gamma_param,
        interpolation_error: interp,
        envelope_ratio: env,
        passed: interp <= 1e-8 && env <= 1e-10,
    }
}

// ---------------------------------------------------------------------------
// Envelope fits

/// Decay fits of the window on the real axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDecay {
    /// `ln |H(x)| = d - c x^p`.
    pub raw: StretchedFit,
    /// `ln |H(x)| + q ln x = d - c x^p` with the saddle-point prefactor
    /// power `q = (mu + 2) / (2 (mu + 1))`.
    pub corrected: StretchedFit,
    pub prefactor_power: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

/// Level below which the trapezoid evaluation of `H` is dominated by
/// rounding (relative to `H(0) = 1`).
pub const WINDOW_NOISE_FLOOR: f64 = 1e-14;

/// Fits on the upper envelope of `|H|` between the levels `ceiling` and
/// `floor`. The saddle point of the transform near `t = 1` gives
/// `|H(x)| ~ A x^{-q} exp(-c x^{mu/(mu+1)})`; the corrected fit removes the
/// algebraic factor, which otherwise biases the exponent low.
pub fn window_decay_fit(params: WindowParams, floor: f64, ceiling: f64) -> Result<WindowDecay> {
    if !(floor >= WINDOW_NOISE_FLOOR && ceiling > floor) {
        return Err(KdvError::InvalidInput(format!(
            "decay fit needs {WINDOW_NOISE_FLOOR:e} <= floor < ceiling (got {floor:e}, {ceiling:e})"
        )));
    }
    // Find where the envelope reaches the floor, doubling the range.
    let mut x_hi = 16.0 / params.beta;
    loop {
        let w = Window::new(params, x_hi)?;
        let tail = (0..200)
            .map(|i| w.h_real(x_hi * (0.8 + 0.2 * i as f64 / 199.0)).abs())
            .fold(0.0, f64::max);
        if tail < floor {
            break;
        }
        if x_hi > 1e6 / params.beta {
            return Err(KdvError::InvalidInput(format!(
                "window envelope did not reach {floor:e}"
            )));
        }
        x_hi *= 2.0;
    }
    let window = Window::new(params, x_hi)?;
    let samples = 6000;
    let x0 = 0.1 / params.beta;
    let xs: Vec<f64> = (0..samples)
        .map(|i| x0 * (x_hi / x0).powf(i as f64 / (samples - 1) as f64))
        .collect();
    let hs: Vec<f64> = xs.par_iter().map(|&x| window.h_real(x).abs()).collect();
    let (ex, ey) = log_envelope(&xs, &hs, 80);
    let (fx, fy): (Vec<f64>, Vec<f64>) = ex
        .iter()
        .zip(&ey)
        .filter(|(_, &e)| e < ceiling && e > floor)
        .map(|(&x, &e)| (x, e.ln()))
        .unzip();
    if fx.len() < 5 {
        return Err(KdvError::InvalidInput(
            "too few envelope points for a decay fit".into(),
        ));
    }
    let q = (params.mu + 2.0) / (2.0 * (params.mu + 1.0));
    let gy: Vec<f64> = fx.iter().zip(&fy).map(|(x, y)| y + q * x.ln()).collect();
    Ok(WindowDecay {
        raw: stretched_fit(&fx, &fy, (0.05, 1.5)),
        corrected: stretched_fit(&fx, &gy, (0.05, 1.5)),
        prefactor_power: q,
        x_min: fx[0],
        x_max: fx[fx.len() - 1],
        points: fx.len(),
    })
}

/// Fit of `ln |Phi_n(x)| = d + c x^p` (reported with `coefficient = -c`) on
/// the upper envelope over `x in [x_lo, x_hi]`.
pub fn product_growth_fit(
    n: i32,
    table: &FrequencyTable,
    nprod: usize,
    x_lo: f64,
    x_hi: f64,
) -> StretchedFit {
    let samples = 20000;
    let xs: Vec<f64> = (0..samples)
        .map(|i| x_lo * (x_hi / x_lo).powf(i as f64 / (samples - 1) as f64))
        .collect();
    let ln = table.lambda(n);
    let vals: Vec<f64> = xs
        .par_iter()
        .map(|&x| psi_real(n, x + ln, table, nprod).abs())
        .collect();
    let (ex, ey) = log_envelope(&xs, &vals, 60);
    let fy: Vec<f64> = ey.iter().map(|v| v.ln()).collect();
    stretched_fit(&ex, &fy, (0.05, 1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_examples() {
        assert!((sigma(0.0, 4.0, 0.5) - (-4.0f64).exp()).abs() < 1e-15);
        assert!(sigma(0.999, 4.0, 0.5) < 1e-27);
        assert_eq!(sigma(1.0, 4.0, 0.5), 0.0);
        for t in [0.1, 0.5, 0.93] {
            assert_eq!(sigma(t, 3.0, 0.5), sigma(-t, 3.0, 0.5));
        }
    }

    #[test]
    fn window_is_normalized_real_and_even() {
        let w = Window::new(WindowParams::new(1.0, 4.0), 500.0).unwrap();
        assert!((w.h_real(0.0) - 1.0).abs() < 1e-12);
        assert!((w.h(C64::new(0.0, 0.0)) - 1.0).norm() < 1e-12);
        for x in [0.3, 7.0, 120.0] {
            let hp = w.h(C64::new(x, 0.0));
            let hm = w.h(C64::new(-x, 0.0));
            assert!(hp.im.abs() < 1e-12 && (hp - hm).norm() < 1e-12);
        }
    }

    #[test]
    fn phi_is_one_at_zero_and_vanishes_at_shifted_frequencies() {
        let table = FrequencyTable::new(
            (1..=30)
                .map(|k| 10.0 * (k as f64).powi(3) + k as f64)
                .collect(),
        );
        for n in [-3, 1, 2] {
            assert!((product_phi(n, C64::new(0.0, 0.0), &table, 30).value - 1.0).norm() < 1e-14);
            for k in [-2, 1, 4] {
                if k != n {
                    let z = C64::new(table.lambda(k) - table.lambda(n), 0.0);
                    assert_eq!(product_phi(n, z, &table, 30).value.norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn gram_diagonal_is_horizon() {
        let g = gram_matrix(&[-5.0, 1.0, 7.0], 0.75);
        for i in 0..3 {
            assert_eq!(g[(i, i)], C64::new(0.75, 0.0));
        }
    }

    #[test]
    fn zero_targets_give_zero_controls() {
        let p = MomentProblem {
            horizon: 1.0,
            indices: vec![-1, 1],
            frequencies: vec![-139.0, 139.0],
            targets: vec![C64::new(0.0, 0.0); 2],
            provenance: vec![],
        };
        let (v, _) = minimal_norm_control(&p, &GramSettings::default()).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        let table = FrequencyTable::new((1..=10).map(|k| 139.0 * (k as f64).powi(3)).collect());
        let w = Window::new(WindowParams::new(1.0, 4.0), 4.0 * 278.0).unwrap();
        let (v, audit) = synthesize_control(&p, &table, &w, &SynthesisSettings::default()).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert_eq!(audit.tail_mass, 0.0);
    }

    #[test]
    fn zero_control_leaves_targets_as_residuals() {
        let p = MomentProblem {
            horizon: 1.0,
            indices: vec![-1, 1],
            frequencies: vec![-3.0, 3.0],
            targets: vec![C64::new(0.5, -2.0), C64::new(0.5, 2.0)],
            provenance: vec![],
        };
        let rep = verify_moments(&TimeSignal::zeros(1.0, 100), &p, &[]);
        assert!((rep.max_residual - p.max_target()).abs() < 1e-15);
    }
}
