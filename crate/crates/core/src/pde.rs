//! Time-domain finite-difference solvers for
//!
//! * the Neumann-controlled system `y_t + y_x + y_xxx = f`,
//!   `y(0) = y(L) = 0`, `y_x(L) = h(t)`;
//! * the jump-controlled system with `y_x(L) - y_x(0) = v(t)`;
//! * the nonlinear system with the extra term `y y_x` and Neumann control;
//!
//! plus an exact modal integrator for the jump system.
//!
//! Space: `N_x` interior points, `h = L/(N_x+1)`, centered second-order
//! stencils for `y_x` and `y_xxx`; the two ghost values needed by the
//! `y_xxx` stencil next to each wall encode the boundary rows. Time:
//! Crank-Nicolson for the linear part (second order, energy-exact for the
//! skew jump operator, contractive for the Neumann operator). The nonlinear
//! term is explicit or, optionally, a Picard-iterated midpoint value.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::linalg::{interleave_perm, trapz, BandLu, Triplets};
use crate::signal::TimeSignal;
use crate::spectral::Spectrum;
use crate::C64;

/// Space-time grid on `(0, T) x (0, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub length: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Grid {
    pub fn new(length: f64, horizon: f64, nx: usize, nt: usize) -> Result<Grid> {
        if !(length > 0.0 && horizon > 0.0) || nx < 16 || nt < 16 {
            return Err(KdvError::InvalidInput(format!(
                "grid needs L, T > 0, N_x >= 16, N_t >= 16 (got L={length}, T={horizon}, N_x={nx}, N_t={nt})"
            )));
        }
        Ok(Grid {
            length,
            horizon,
            nx,
            nt,
        })
    }

    /// Grid whose time steps coincide with the samples of `signal`.
    pub fn matched(length: f64, nx: usize, signal: &TimeSignal) -> Result<Grid> {
        Grid::new(length, signal.horizon, nx, signal.steps())
    }

    pub fn h(&self) -> f64 {
        self.length / (self.nx + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// Interior points `x_1..x_{N_x}`.
    pub fn xs(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.nx).map(|j| j as f64 * h).collect()
    }

    pub fn with_nt(&self, nt: usize) -> Grid {
        Grid { nt, ..*self }
    }
}

/// Discrete `L2(0, L)` norm of an interior grid function (walls are zero).
pub fn grid_l2(y: &[f64], h: f64) -> f64 {
    (h * y.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `h * sum_j y_j phi(x_j)`: unconjugated pairing against a mode.
pub fn pair_with(y: &[f64], phi: &[C64], h: f64) -> C64 {
    y.iter().zip(phi).map(|(a, b)| b * *a).sum::<C64>() * h
}

/// Which boundary row the third-derivative stencil is closed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// `y_x(L) = control`
    Neumann,
    /// `y_x(L) - y_x(0) = control`
    Jump,
}

/// `y_t + B y + b c(t) = f` for the interior values.
#[derive(Debug, Clone)]
pub struct FdOperator {
    pub n: usize,
    pub h: f64,
    pub boundary: Boundary,
    pub matrix: Triplets,
    pub ctrl: Vec<f64>,
}

/// Assemble `B = D3 + D1` with the ghost closures of `boundary`.
///
/// Neumann: `u_{-1} = -u_1` on the left and `u_{N+2} = u_N + 2 h c` on the
/// right. Jump: `u_{-1} = u_N + h c` and `u_{N+2} = u_1 + h c`, which
/// splits the slope jump evenly between the walls and leaves `B` exactly
/// skew-symmetric (and nonsingular only for even `N`).
#[allow(clippy::needless_range_loop)]
pub fn fd_operator(length: f64, n: usize, boundary: Boundary) -> FdOperator {
    let h = length / (n + 1) as f64;
    let d3 = 1.0 / (2.0 * h.powi(3));
    let d1 = 1.0 / (2.0 * h);
    let mut matrix = Triplets::new(n);
    let mut ctrl = vec![0.0; n];
    let last = n as i64;
    for row in 0..n {
        let jj = row as i64 + 1;
        for (o, w) in [
            (-2i64, -d3),
            (-1, 2.0 * d3 - d1),
            (1, -2.0 * d3 + d1),
            (2, d3),
        ] {
            let idx = jj + o;
            if (1..=last).contains(&idx) {
                matrix.push(row, (idx - 1) as usize, w);
            } else if idx == -1 {
                match boundary {
                    Boundary::Neumann => matrix.push(row, 0, -w),
                    Boundary::Jump => {
                        matrix.push(row, n - 1, w);
                        ctrl[row] += w * h;
                    }
                }
            } else if idx == last + 2 {
                match boundary {
                    Boundary::Neumann => {
                        matrix.push(row, n - 1, w);
                        ctrl[row] += w * 2.0 * h;
                    }
                    Boundary::Jump => {
                        matrix.push(row, 0, w);
                        ctrl[row] += w * h;
                    }
                }
            }
        }
    }
    FdOperator {
        n,
        h,
        boundary,
        matrix,
        ctrl,
    }
}

/// One-sided second-order slope at `x = 0` (uses `u_0 = 0`).
///
/// The centered five-point third difference has the parasitic root
/// `(-1)^j`, which the ghost closures excite at `O(h^2)`. The weights
/// `(13, 8, -5) / 14` are exact on linear and quadratic data and annihilate
/// that sawtooth, so the trace stays second order.
pub fn slope_left(y: &[f64], h: f64) -> f64 {
    (13.0 * y[0] + 8.0 * y[1] - 5.0 * y[2]) / (14.0 * h)
}

/// Mirror image of [`slope_left`] at `x = L` (uses `u_{N+1} = 0`).
pub fn slope_right(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    -(13.0 * y[n - 1] + 8.0 * y[n - 2] - 5.0 * y[n - 3]) / (14.0 * h)
}

/// Discrete `integral y_x^2 dx` by forward differences including the walls.
fn h1_sq(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    let mut s = y[0] * y[0] + y[n - 1] * y[n - 1];
    for j in 1..n {
        let d = y[j] - y[j - 1];
        s += d * d;
    }
    s / h
}

/// Right-hand side `f(t, x)` of the linear systems.
#[derive(Clone, Default)]
pub enum SourceTerm {
    #[default]
    Zero,
    /// `values[n][j] = f(t_n, x_j)`.
    Sampled(Vec<Vec<f64>>),
    /// Closed-form `f(t, x)`.
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceTerm::Zero => write!(f, "Zero"),
            SourceTerm::Sampled(v) => write!(f, "Sampled({} steps)", v.len()),
            SourceTerm::Function(_) => write!(f, "Function"),
        }
    }
}

impl SourceTerm {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        SourceTerm::Function(Arc::new(f))
    }

    fn is_zero(&self) -> bool {
        matches!(self, SourceTerm::Zero)
    }

    fn fill(&self, step: usize, t: f64, xs: &[f64], out: &mut [f64]) {
        match self {
            SourceTerm::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            SourceTerm::Sampled(v) => out.copy_from_slice(&v[step]),
            SourceTerm::Function(f) => out.iter_mut().zip(xs).for_each(|(o, &x)| *o = f(t, x)),
        }
    }
}

/// Stored solution of one time-domain solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub method: String,
    /// Step indices of the stored snapshots (always includes 0 and `N_t`).
    pub snapshot_steps: Vec<usize>,
    pub snapshots: Vec<Vec<f64>>,
    /// `y_x(t_n, 0)` for every step.
    pub trace0: Vec<f64>,
    /// `y_x(t_n, L)` for every step.
    pub trace_l: Vec<f64>,
    /// Discrete `integral y^2 dx` for every step.
    pub energy: Vec<f64>,
    /// Discrete `integral y_x^2 dx` for every step.
    pub h1: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.snapshots.last().expect("trajectory has snapshots")
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.snapshots[0]
    }

    /// Build a trajectory from the full list of states `y(t_n)`, `n = 0..=N_t`.
    pub fn from_states(grid: Grid, states: Vec<Vec<f64>>) -> Trajectory {
        let h = grid.h();
        Trajectory {
            grid,
            method: "external".into(),
            snapshot_steps: (0..states.len()).collect(),
            trace0: states.iter().map(|y| slope_left(y, h)).collect(),
            trace_l: states.iter().map(|y| slope_right(y, h)).collect(),
            energy: states.iter().map(|y| grid_l2(y, h).powi(2)).collect(),
            h1: states.iter().map(|y| h1_sq(y, h)).collect(),
            snapshots: states,
        }
    }

    /// Snapshot closest to time `t`.
    pub fn snapshot_near(&self, t: f64) -> (f64, &[f64]) {
        let dt = self.grid.dt();
        let idx = self
            .snapshot_steps
            .iter()
            .enumerate()
            .min_by(|a, b| {
                ((*a.1 as f64) * dt - t)
                    .abs()
                    .total_cmp(&((*b.1 as f64) * dt - t).abs())
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        (self.snapshot_steps[idx] as f64 * dt, &self.snapshots[idx])
    }
}

/// How many snapshots a solve keeps (besides the initial and final states).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub snapshots: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { snapshots: 100 }
    }
}

/// Treatment of the nonlinear term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOptions {
    /// Bound on `dt * max|y| / h` for the explicit term.
    pub kappa: f64,
    /// Use Picard-iterated midpoint values instead of the explicit term.
    pub picard: bool,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions {
            kappa: 0.5,
            picard: false,
            picard_tol: 1e-12,
            picard_max_iter: 30,
        }
    }
}

struct Recorder {
    stride: usize,
    nt: usize,
    h: f64,
    traj: Trajectory,
}

impl Recorder {
    fn new(grid: Grid, method: &str, opts: SolveOptions) -> Self {
        let n = grid.nt + 1;
        Recorder {
            stride: (grid.nt / opts.snapshots.max(1)).max(1),
            nt: grid.nt,
            h: grid.h(),
            traj: Trajectory {
                grid,
                method: method.into(),
                snapshot_steps: Vec::new(),
                snapshots: Vec::new(),
                trace0: Vec::with_capacity(n),
                trace_l: Vec::with_capacity(n),
                energy: Vec::with_capacity(n),
                h1: Vec::with_capacity(n),
            },
        }
    }

    fn record(&mut self, step: usize, y: &[f64]) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(KdvError::NonFinite { step });
        }
        let h = self.h;
        self.traj.energy.push(grid_l2(y, h).powi(2));
        self.traj.h1.push(h1_sq(y, h));
        if step.is_multiple_of(self.stride) || step == self.nt {
            self.traj.snapshot_steps.push(step);
            self.traj.snapshots.push(y.to_vec());
        }
        Ok(())
    }
}

/// Boundary slopes from the weak form of the equation.
///
/// For a weight `psi` with `psi(0) = psi(L) = 0`, integrating the equation
/// against `psi` gives
/// `d/dt <psi, y> - <psi' + psi''', y> + <psi, (y^2/2)_x> - <psi, f>
///  = psi'(L) y_x(L) - psi'(0) y_x(0)`.
/// The weights `x (1 - x/L)^2` and `(x^3 - L x^2) / L^2` isolate minus the
/// left slope and the right slope. Evaluated at the Crank-Nicolson
/// midpoints, the interior integrals keep the second-order accuracy of the
/// states, unlike local differences at the wall.
struct WeakTraces {
    h: f64,
    left: Vec<f64>,
    left_d: Vec<f64>,
    right: Vec<f64>,
    right_d: Vec<f64>,
    mid0: Vec<f64>,
    mid_l: Vec<f64>,
}

impl WeakTraces {
    fn new(length: f64, xs: &[f64], h: f64, steps: usize) -> Self {
        let l = length;
        let left = xs.iter().map(|&x| x * (1.0 - x / l).powi(2)).collect();
        let left_d = xs
            .iter()
            .map(|&x| 1.0 - 4.0 * x / l + 3.0 * x * x / (l * l) + 6.0 / (l * l))
            .collect();
        let right = xs
            .iter()
            .map(|&x| (x * x * x - l * x * x) / (l * l))
            .collect();
        let right_d = xs
            .iter()
            .map(|&x| (3.0 * x * x - 2.0 * l * x) / (l * l) + 6.0 / (l * l))
            .collect();
        WeakTraces {
            h,
            left,
            left_d,
            right,
            right_d,
            mid0: Vec::with_capacity(steps),
            mid_l: Vec::with_capacity(steps),
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() * self.h
    }

    /// Record the slopes at `t_{n+1/2}` from `y^n`, `y^{n+1}`, the mean
    /// source and the convective term used by the step.
    fn push(&mut self, y0: &[f64], y1: &[f64], dt: f64, fbar: &[f64], nl: Option<&[f64]>) {
        let g = |w: &[f64], wd: &[f64]| {
            let mut v = (self.dot(w, y1) - self.dot(w, y0)) / dt;
            v -= 0.5 * (self.dot(wd, y0) + self.dot(wd, y1));
            if let Some(nl) = nl {
                v += self.dot(w, nl);
            }
            v - self.dot(w, fbar)
        };
        let s0 = -g(&self.left, &self.left_d);
        let sl = g(&self.right, &self.right_d);
        self.mid0.push(s0);
        self.mid_l.push(sl);
    }

    /// Nodal values: means of adjacent midpoints, linear extrapolation at
    /// the ends.
    fn nodal(mid: &[f64]) -> Vec<f64> {
        let m = mid.len();
        if m == 1 {
            return vec![mid[0]; 2];
        }
        let mut out = Vec::with_capacity(m + 1);
        out.push(1.5 * mid[0] - 0.5 * mid[1]);
        for i in 1..m {
            out.push(0.5 * (mid[i - 1] + mid[i]));
        }
        out.push(1.5 * mid[m - 1] - 0.5 * mid[m - 2]);
        out
    }
}

fn check_inputs(y0: &[f64], grid: &Grid) -> Result<()> {
    if y0.len() != grid.nx {
        return Err(KdvError::InvalidInput(format!(
            "initial state has {} values, grid has {}",
            y0.len(),
            grid.nx
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(KdvError::NonFinite { step: 0 });
    }
    Ok(())
}

/// Shared Crank-Nicolson loop for the three finite-difference systems.
#[allow(clippy::too_many_arguments)]
fn cn_solve(
    y0: &[f64],
    f: &SourceTerm,
    control: &TimeSignal,
    grid: Grid,
    boundary: Boundary,
    nonlinear: Option<NonlinearOptions>,
    opts: SolveOptions,
    method: &str,
) -> Result<Trajectory> {
    check_inputs(y0, &grid)?;
    let n = grid.nx;
    if boundary == Boundary::Jump && n % 2 == 1 {
        // an odd-sized skew matrix is singular; its null vector is the grid
        // sawtooth, which the boundary data would drive resonantly
        return Err(KdvError::InvalidInput(format!(
            "the skew jump closure needs an even N_x (got {n})"
        )));
    }
    let (dt, h) = (grid.dt(), grid.h());
    let op = fd_operator(grid.length, n, boundary);
    let perm = match boundary {
        Boundary::Jump => Some(interleave_perm(n)),
        Boundary::Neumann => None,
    };
    let lu = BandLu::factor(&op.matrix.shifted(1.0, 0.5 * dt), perm)?;
    let c = control.resampled(grid.nt).re();
    let xs = grid.xs();

    let mut rec = Recorder::new(grid, method, opts);
    let mut y = y0.to_vec();
    let mut by = vec![0.0; n];
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut nl = vec![0.0; n];
    let mut mid = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut fbar = vec![0.0; n];
    let mut weak = WeakTraces::new(grid.length, &xs, h, grid.nt);
    f.fill(0, 0.0, &xs, &mut f0);
    rec.record(0, &y)?;

    let conv = |y: &[f64], out: &mut [f64]| {
        // (y^2/2)_x by centered differences: (y_{j+1}^2 - y_{j-1}^2) / (4h)
        for j in 0..n {
            let l = if j > 0 { y[j - 1] } else { 0.0 };
            let r = if j + 1 < n { y[j + 1] } else { 0.0 };
            out[j] = (r * r - l * l) / (4.0 * h);
        }
    };

    for step in 1..=grid.nt {
        let t1 = step as f64 * dt;
        if !f.is_zero() {
            f.fill(step, t1, &xs, &mut f1);
        }
        op.matrix.apply(&y, &mut by);
        let cc = 0.5 * dt * (c[step - 1] + c[step]);
        for j in 0..n {
            rhs[j] = y[j] - 0.5 * dt * by[j] - cc * op.ctrl[j] + 0.5 * dt * (f0[j] + f1[j]);
        }
        match nonlinear {
            None => {
                next.copy_from_slice(&rhs);
                lu.solve(&mut next);
            }
            Some(nopt) if !nopt.picard => {
                let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let ratio = dt * ymax / h;
                if ratio > nopt.kappa {
                    return Err(KdvError::Unstable {
                        step,
                        ratio,
                        kappa: nopt.kappa,
                    });
                }
                conv(&y, &mut nl);
                for j in 0..n {
                    next[j] = rhs[j] - dt * nl[j];
                }
                lu.solve(&mut next);
            }
            Some(nopt) => {
                next.copy_from_slice(&y);
                let mut converged = false;
                for _ in 0..nopt.picard_max_iter {
                    for j in 0..n {
                        mid[j] = 0.5 * (y[j] + next[j]);
                    }
                    conv(&mid, &mut nl);
                    let mut trial: Vec<f64> = (0..n).map(|j| rhs[j] - dt * nl[j]).collect();
                    lu.solve(&mut trial);
                    let diff = trial
                        .iter()
                        .zip(&next)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let scale = trial.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                    next.copy_from_slice(&trial);
                    if diff <= nopt.picard_tol * scale {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(KdvError::PicardNotConverged { step });
                }
            }
        }
        for j in 0..n {
            fbar[j] = 0.5 * (f0[j] + f1[j]);
        }
        weak.push(&y, &next, dt, &fbar, nonlinear.map(|_| nl.as_slice()));
        std::mem::swap(&mut y, &mut next);
        std::mem::swap(&mut f0, &mut f1);
        rec.record(step, &y)?;
    }
    rec.traj.trace0 = WeakTraces::nodal(&weak.mid0);
    rec.traj.trace_l = WeakTraces::nodal(&weak.mid_l);
    Ok(rec.traj)
}

/// Linear KdV with Neumann control `y_x(L) = h(t)`.
pub fn solve_neumann(
    y0: &[f64],
    f: &SourceTerm,
    h_ctrl: &TimeSignal,
    grid: Grid,
) -> Result<Trajectory> {
    solve_neumann_with(y0, f, h_ctrl, grid, SolveOptions::default())
}

pub fn solve_neumann_with(
    y0: &[f64],
    f: &SourceTerm,
    h_ctrl: &TimeSignal,
    grid: Grid,
    opts: SolveOptions,
) -> Result<Trajectory> {
    cn_solve(
        y0,
        f,
        h_ctrl,
        grid,
        Boundary::Neumann,
        None,
        opts,
        "neumann-fd",
    )
}

/// Method for [`solve_jump`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpMethod {
    Fd,
    Modal,
}

/// Linear KdV with the slope-jump control `y_x(L) - y_x(0) = v(t)`.
/// `spec` is required for the modal method.
pub fn solve_jump(
    y0: &[f64],
    f: &SourceTerm,
    v_ctrl: &TimeSignal,
    grid: Grid,
    method: JumpMethod,
    spec: Option<&Spectrum>,
) -> Result<Trajectory> {
    solve_jump_with(y0, f, v_ctrl, grid, method, spec, SolveOptions::default())
}

pub fn solve_jump_with(
    y0: &[f64],
    f: &SourceTerm,
    v_ctrl: &TimeSignal,
    grid: Grid,
    method: JumpMethod,
    spec: Option<&Spectrum>,
    opts: SolveOptions,
) -> Result<Trajectory> {
    match method {
        JumpMethod::Fd => cn_solve(y0, f, v_ctrl, grid, Boundary::Jump, None, opts, "jump-fd"),
        JumpMethod::Modal => {
            let spec = spec.ok_or_else(|| {
                KdvError::InvalidInput("modal jump solver needs a spectrum".into())
            })?;
            solve_jump_modal(y0, f, v_ctrl, grid, spec, opts, DEFAULT_PROJECTION_TOL)
        }
    }
}

/// Default relative tolerance on the part of `y0` outside the modal basis.
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-6;

/// `(e^z - 1)/z` and `(e^z - 1 - z)/z^2`.
fn phi12(z: C64) -> (C64, C64) {
    if z.norm() < 1e-4 {
        let one = C64::new(1.0, 0.0);
        (
            one + z / 2.0 + z * z / 6.0,
            one / 2.0 + z / 6.0 + z * z / 24.0,
        )
    } else {
        let e = z.exp();
        ((e - 1.0) / z, (e - 1.0 - z) / (z * z))
    }
}

/// Exact modal integration of `m_k' = -i lambda_k m_k + phi_k'(L) v(t) + p_k(f)`
/// with `v` and `f` linear between samples.
pub fn solve_jump_modal(
    y0: &[f64],
    f: &SourceTerm,
    v_ctrl: &TimeSignal,
    grid: Grid,
    spec: &Spectrum,
    opts: SolveOptions,
    projection_tol: f64,
) -> Result<Trajectory> {
    check_inputs(y0, &grid)?;
    let (h, dt) = (grid.h(), grid.dt());
    let xs = grid.xs();
    let samples: Vec<Vec<C64>> = spec.modes.iter().map(|m| m.sample(&xs)).collect();
    let mut m: Vec<C64> = samples.iter().map(|phi| pair_with(y0, phi, h)).collect();
    let index_of = |k: i32| {
        spec.modes
            .iter()
            .position(|md| md.k == k)
            .expect("symmetric spectrum")
    };
    let partner: Vec<usize> = spec.modes.iter().map(|md| index_of(-md.k)).collect();

    let reconstruct = |m: &[C64]| -> Vec<f64> {
        let mut y = vec![0.0; xs.len()];
        for (i, phi) in samples.iter().enumerate() {
            let c = m[partner[i]];
            for (yj, p) in y.iter_mut().zip(phi) {
                *yj += (c * p).re;
            }
        }
        y
    };
    let y_proj = reconstruct(&m);
    let tail = grid_l2(
        &y0.iter()
            .zip(&y_proj)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
        h,
    );
    let norm0 = grid_l2(y0, h);
    if norm0 > 0.0 && tail > projection_tol * norm0 {
        return Err(KdvError::ProjectionTail {
            modes: spec.modes.len(),
            tail: tail / norm0,
        });
    }

    let v = v_ctrl.resampled(grid.nt).re();
    let nmodes = spec.modes.len();
    let factors: Vec<(C64, C64, C64)> = spec
        .modes
        .iter()
        .map(|md| {
            let z = C64::new(0.0, -md.lambda * dt);
            let (p1, p2) = phi12(z);
            (z.exp(), p1 * dt, p2 * dt)
        })
        .collect();
    let mut fbuf = vec![0.0; xs.len()];
    let project_f = |step: usize, t: f64, buf: &mut Vec<f64>| -> Vec<C64> {
        if f.is_zero() {
            return vec![C64::new(0.0, 0.0); nmodes];
        }
        f.fill(step, t, &xs, buf);
        samples.iter().map(|phi| pair_with(buf, phi, h)).collect()
    };
    let mut pf0 = project_f(0, 0.0, &mut fbuf);

    let stride = (grid.nt / opts.snapshots.max(1)).max(1);
    let mut traj = Trajectory {
        grid,
        method: "jump-modal".into(),
        snapshot_steps: Vec::new(),
        snapshots: Vec::new(),
        trace0: Vec::with_capacity(grid.nt + 1),
        trace_l: Vec::with_capacity(grid.nt + 1),
        energy: Vec::with_capacity(grid.nt + 1),
        h1: Vec::new(),
    };
    let record = |step: usize, m: &[C64], traj: &mut Trajectory| {
        let (mut s0, mut sl) = (0.0, 0.0);
        for (i, md) in spec.modes.iter().enumerate() {
            let c = m[partner[i]];
            s0 += (c * md.slope0).re;
            sl += (c * md.slope_l).re;
        }
        traj.trace0.push(s0);
        traj.trace_l.push(sl);
        traj.energy.push(m.iter().map(|z| z.norm_sqr()).sum());
        if step.is_multiple_of(stride) || step == grid.nt {
            let y = reconstruct(m);
            traj.h1.push(h1_sq(&y, h));
            traj.snapshot_steps.push(step);
            traj.snapshots.push(y);
        }
    };
    record(0, &m, &mut traj);
    for step in 1..=grid.nt {
        let pf1 = project_f(step, step as f64 * dt, &mut fbuf);
        let (v0, v1) = (v[step - 1], v[step]);
        for (i, md) in spec.modes.iter().enumerate() {
            let (e, p1, p2) = factors[i];
            let g0 = md.slope_l * v0 + pf0[i];
            let g1 = md.slope_l * v1 + pf1[i];
            m[i] = e * m[i] + p1 * g0 + p2 * (g1 - g0);
        }
        pf0 = pf1;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(KdvError::NonFinite { step });
        }
        record(step, &m, &mut traj);
    }
    Ok(traj)
}

/// Nonlinear KdV `y_t + y_x + y_xxx + y y_x = 0` with Neumann control.
pub fn solve_nonlinear(y0: &[f64], u_ctrl: &TimeSignal, grid: Grid) -> Result<Trajectory> {
    solve_nonlinear_with(
        y0,
        u_ctrl,
        grid,
        NonlinearOptions::default(),
        SolveOptions::default(),
    )
}

pub fn solve_nonlinear_with(
    y0: &[f64],
    u_ctrl: &TimeSignal,
    grid: Grid,
    nopt: NonlinearOptions,
    opts: SolveOptions,
) -> Result<Trajectory> {
    let name = if nopt.picard {
        "nonlinear-fd-picard"
    } else {
        "nonlinear-fd"
    };
    cn_solve(
        y0,
        &SourceTerm::Zero,
        u_ctrl,
        grid,
        Boundary::Neumann,
        Some(nopt),
        opts,
        name,
    )
}

/// Which wall a trace is taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum End {
    Left,
    Right,
}

/// The stored boundary slope as a signal.
pub fn trace_slope(traj: &Trajectory, end: End) -> TimeSignal {
    let data = match end {
        End::Left => &traj.trace0,
        End::Right => &traj.trace_l,
    };
    TimeSignal::from_real(traj.grid.horizon, data)
}

/// Discrete analogues of the solution-space norm components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// `max_t ||y(t)||_{L2}`
    pub sup_l2: f64,
    /// `(integral_0^T ||y_x(t)||^2 dt)^{1/2}`
    pub h1_l2t: f64,
    pub trace0_l2: f64,
    pub trace_l_l2: f64,
}

pub fn norms(traj: &Trajectory) -> NormReport {
    let dt = traj.grid.dt();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let h1 = if traj.h1.len() == traj.energy.len() {
        trapz(&traj.h1, dt).sqrt()
    } else {
        // modal trajectories keep H1 data only at snapshots
        let step_dt = traj.snapshot_steps.get(1).map_or(dt, |s| *s as f64 * dt);
        trapz(&traj.h1, step_dt).sqrt()
    };
    NormReport {
        sup_l2: traj.energy.iter().fold(0.0f64, |m, &e| m.max(e)).sqrt(),
        h1_l2t: h1,
        trace0_l2: trapz(&sq(&traj.trace0), dt).sqrt(),
        trace_l_l2: trapz(&sq(&traj.trace_l), dt).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, nt: usize) -> Grid {
        Grid::new(1.0, 1.0, nx, nt).unwrap()
    }

    #[test]
    fn jump_operator_is_exactly_skew() {
        let op = fd_operator(1.0, 40, Boundary::Jump);
        let d = op.matrix.to_dense();
        assert_eq!((&d + d.transpose()).amax(), 0.0);
    }

    #[test]
    fn neumann_symmetric_part_is_psd() {
        let op = fd_operator(1.0, 40, Boundary::Neumann);
        let d = op.matrix.to_dense();
        let s = (&d + d.transpose()) * 0.5;
        let min = s.symmetric_eigenvalues().min();
        assert!(min > -1e-6 * s.amax(), "min eigenvalue {min}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = grid(32, 32);
        let z = TimeSignal::zeros(1.0, 32);
        let tr = solve_neumann(&vec![0.0; 32], &SourceTerm::Zero, &z, g).unwrap();
        assert!(tr.final_state().iter().all(|&v| v == 0.0));
        assert!(tr.trace0.iter().all(|&v| v == 0.0));
        let tr = solve_nonlinear(&vec![0.0; 32], &z, g).unwrap();
        assert!(tr.final_state().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_sine_norm() {
        let g = grid(199, 16);
        let y: Vec<f64> = g
            .xs()
            .iter()
            .map(|x| (std::f64::consts::PI * x).sin())
            .collect();
        let tr = Trajectory::from_states(g, vec![y; 17]);
        assert!((norms(&tr).sup_l2 - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn nonlinear_stability_bound_is_enforced() {
        let g = grid(64, 16);
        let y0: Vec<f64> = g
            .xs()
            .iter()
            .map(|x| 1e3 * (std::f64::consts::PI * x).sin())
            .collect();
        let r = solve_nonlinear(&y0, &TimeSignal::zeros(1.0, 16), g);
        assert!(matches!(r, Err(KdvError::Unstable { .. })));
    }

    #[test]
    fn picard_matches_explicit_for_small_data() {
        let g = grid(64, 400);
        let y0: Vec<f64> = g
            .xs()
            .iter()
            .map(|x| 1e-2 * (std::f64::consts::PI * x).sin())
            .collect();
        let z = TimeSignal::zeros(1.0, 400);
        let a = solve_nonlinear(&y0, &z, g).unwrap();
        let opts = NonlinearOptions {
            picard: true,
            ..Default::default()
        };
        let b = solve_nonlinear_with(&y0, &z, g, opts, SolveOptions::default()).unwrap();
        let d: Vec<f64> = a
            .final_state()
            .iter()
            .zip(b.final_state())
            .map(|(p, q)| p - q)
            .collect();
        assert!(grid_l2(&d, g.h()) < 1e-3 * grid_l2(&y0, g.h()));
    }
}
