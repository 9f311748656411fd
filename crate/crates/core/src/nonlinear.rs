//! Reaching small targets and steering small states to rest for the
//! nonlinear equation `y_t + y_x + y_xxx + y y_x = 0`.
//!
//! [`ReachOperator`] is the linear map `y_T -> u` that steers `0` to the
//! span-projection of `y_T` through the linear Neumann system. Since the
//! moment targets depend linearly on `y_T`, the operator stores one real
//! control per basis target (`d = e_k + e_{-k}` and `d = i e_k - i e_{-k}`)
//! and forms every control as a combination of those.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{jump_control, transfer_to_neumann, ControlContext, ControlSettings, Method};
use crate::error::{KdvError, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::moment::{
    assemble_moment_problem, assemble_reach_problem, calibrate_gamma, MomentProblem,
};
use crate::pde::{
    grid_l2, solve_jump_with, solve_neumann_with, solve_nonlinear_with, Grid, NonlinearOptions,
    SolveOptions, SourceTerm,
};
use crate::signal::TimeSignal;
use crate::C64;

/// Precomputed linear reachability operator at one horizon.
#[derive(Debug, Clone)]
pub struct ReachOperator {
    pub ctx: ControlContext,
    pub settings: ControlSettings,
    pub horizon: f64,
    pub grid: Grid,
    /// Window parameter used (window method only).
    pub gamma_param: Option<f64>,
    /// For each positive mode `k`: jump controls for the targets
    /// `(1, 1)` and `(i, -i)` at `(k, -k)`.
    basis_v: Vec<[TimeSignal; 2]>,
    /// The matching Neumann controls `v + y_x(., 0)` from zero data.
    basis_u: Vec<[TimeSignal; 2]>,
}

/// A control for the linear system and the jump control it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearControl {
    pub v: TimeSignal,
    pub u: TimeSignal,
    pub problem: MomentProblem,
}

fn unit_problem(template: &MomentProblem, k: i32, d: C64) -> MomentProblem {
    let targets = template
        .indices
        .iter()
        .map(|&n| {
            if n == k {
                d
            } else if n == -k {
                d.conj()
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    MomentProblem {
        targets,
        ..template.clone()
    }
}

impl ReachOperator {
    /// Build the basis controls. With the window method and no fixed
    /// `gamma`, the window parameter is calibrated once on the first basis
    /// problem and then reused for every basis control.
    pub fn new(
        ctx: &ControlContext,
        horizon: f64,
        settings: &ControlSettings,
    ) -> Result<ReachOperator> {
        if !(horizon > 0.0) {
            return Err(KdvError::InvalidInput(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let nx = settings.nx;
        let h = ctx.length() / (nx + 1) as f64;
        let zero = vec![0.0; nx];
        let template = assemble_reach_problem(&zero, &ctx.spectrum, horizon, h)?;
        let mut settings = *settings;
        let mut gamma_param = None;
        if settings.method == Method::Window {
            let g = match settings.gamma {
                Some(g) => g,
                None => {
                    let probe = unit_problem(&template, 1, C64::new(1.0, 0.0));
                    calibrate_gamma(
                        &probe,
                        &ctx.table,
                        settings.gamma_start,
                        &settings.synthesis,
                    )
                    .map_err(|e| e.at("calibrate"))?
                    .params
                    .gamma_param
                }
            };
            settings.gamma = Some(g);
            gamma_param = Some(g);
        }
        let count = ctx.count() as i32;
        let jobs: Vec<(i32, C64)> = (1..=count)
            .flat_map(|k| [(k, C64::new(1.0, 0.0)), (k, C64::new(0.0, 1.0))])
            .collect();
        let basis_v: Vec<TimeSignal> = jobs
            .par_iter()
            .map(|&(k, d)| {
                jump_control(&unit_problem(&template, k, d), ctx, &settings).map(|jc| jc.v)
            })
            .collect::<Result<_>>()?;
        let grid = Grid::matched(ctx.length(), nx, &basis_v[0]).map_err(|e| e.at("grid"))?;
        let basis_u: Vec<TimeSignal> = basis_v
            .par_iter()
            .map(|v| {
                let traj = solve_jump_with(
                    &zero,
                    &SourceTerm::Zero,
                    v,
                    grid,
                    settings.jump_method,
                    Some(&ctx.spectrum),
                    SolveOptions { snapshots: 1 },
                )?;
                Ok(transfer_to_neumann(v, &traj))
            })
            .collect::<Result<_>>()
            .map_err(|e: KdvError| e.at("jump"))?;
        let pair = |b: Vec<TimeSignal>| -> Vec<[TimeSignal; 2]> {
            b.chunks(2).map(|c| [c[0].clone(), c[1].clone()]).collect()
        };
        Ok(ReachOperator {
            ctx: ctx.clone(),
            settings,
            horizon,
            grid,
            gamma_param,
            basis_v: pair(basis_v),
            basis_u: pair(basis_u),
        })
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    fn combine(&self, basis: &[[TimeSignal; 2]], problem: &MomentProblem) -> TimeSignal {
        let mut out = vec![0.0; self.grid.nt + 1];
        for (&k, d) in problem.indices.iter().zip(&problem.targets) {
            if k <= 0 {
                continue;
            }
            let [re, im] = &basis[(k - 1) as usize];
            for (o, (a, b)) in out.iter_mut().zip(re.values.iter().zip(&im.values)) {
                *o += d.re * a.re + d.im * b.re;
            }
        }
        TimeSignal::from_real(self.horizon, &out)
    }

    /// Control steering `0` to `y_target` (on the retained modes).
    pub fn reach(&self, y_target: &[f64]) -> Result<LinearControl> {
        self.check_len(y_target)?;
        let problem = assemble_reach_problem(y_target, &self.ctx.spectrum, self.horizon, self.h())?;
        Ok(LinearControl {
            v: self.combine(&self.basis_v, &problem),
            u: self.combine(&self.basis_u, &problem),
            problem,
        })
    }

    /// Linear null control of `y0`: the jump control from the basis, then
    /// one jump solve from `y0` for the transfer.
    pub fn null(&self, y0: &[f64]) -> Result<LinearControl> {
        self.check_len(y0)?;
        let problem = assemble_moment_problem(y0, &self.ctx.spectrum, self.horizon, self.h())?;
        let v = self.combine(&self.basis_v, &problem);
        let traj = solve_jump_with(
            y0,
            &SourceTerm::Zero,
            &v,
            self.grid,
            self.settings.jump_method,
            Some(&self.ctx.spectrum),
            SolveOptions { snapshots: 1 },
        )
        .map_err(|e| e.at("jump"))?;
        let u = transfer_to_neumann(&v, &traj);
        Ok(LinearControl { v, u, problem })
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.grid.nx {
            return Err(KdvError::InvalidInput(format!(
                "state has {} values, N_x = {}",
                y.len(),
                self.grid.nx
            )));
        }
        Ok(())
    }
}

/// Final state of the nonlinear system from `y0` under the Neumann control `u`.
pub fn nonlinear_final(
    y0: &[f64],
    u: &TimeSignal,
    grid: Grid,
    nopt: NonlinearOptions,
) -> Result<Vec<f64>> {
    let traj = solve_nonlinear_with(y0, u, grid, nopt, SolveOptions { snapshots: 1 })?;
    Ok(traj.final_state().to_vec())
}

/// Final state of the linear system from `y0` under the Neumann control `u`.
pub fn linear_final(y0: &[f64], u: &TimeSignal, grid: Grid) -> Result<Vec<f64>> {
    let traj = solve_neumann_with(
        y0,
        &SourceTerm::Zero,
        u,
        grid,
        SolveOptions { snapshots: 1 },
    )?;
    Ok(traj.final_state().to_vec())
}

/// `P v`: the nonlinear state at time `T` from zero data.
pub fn reach_map(u: &TimeSignal, grid: Grid, nopt: NonlinearOptions) -> Result<Vec<f64>> {
    nonlinear_final(&vec![0.0; grid.nx], u, grid, nopt)
}

/// Stopping rule shared by the two iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationSettings {
    /// Stop when the residual is at most `tol` times the data norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Consecutive residual increases treated as divergence.
    pub divergence_window: usize,
    /// Control norms above this are flagged in the result.
    pub smallness_warning: f64,
    pub nonlinear: NonlinearOptions,
}

impl Default for IterationSettings {
    fn default() -> Self {
        IterationSettings {
            tol: 5e-4,
            max_iter: 20,
            divergence_window: 3,
            smallness_warning: 1e3,
            nonlinear: NonlinearOptions::default(),
        }
    }
}

/// Trace of an iteration toward a target (or toward rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachResult {
    pub horizon: f64,
    pub target: Vec<f64>,
    pub target_norm: f64,
    /// Norms of the modified targets `y~^{(j)}` (or of the controls `u^{(j)}`
    /// for null control).
    pub iterate_norms: Vec<f64>,
    /// Absolute residual after each iteration.
    pub residuals: Vec<f64>,
    /// `residual(j+1) / residual(j)`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub control: TimeSignal,
    pub control_norm: f64,
    /// Set when the control norm exceeded the smallness warning.
    pub warning: Option<String>,
    /// Last modified target (empty for null control).
    pub final_iterate: Vec<f64>,
}

impl ReachResult {
    /// Geometric mean of the contraction ratios.
    pub fn mean_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self
            .ratios
            .iter()
            .copied()
            .filter(|r| *r > 0.0 && r.is_finite())
            .collect();
        (!r.is_empty()).then(|| (r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp())
    }

    pub fn iterations(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

fn ratios(res: &[f64]) -> Vec<f64> {
    res.windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect()
}

fn diverging(res: &[f64], window: usize) -> bool {
    window > 0
        && res.len() > window
        && res[res.len() - window - 1..]
            .windows(2)
            .all(|w| w[1] > w[0])
}

/// Fixed point of `G(y~) = y~ - P L y~ + y_T`, started at `y~ = y_T`.
pub fn fixed_point_reach(
    op: &ReachOperator,
    y_target: &[f64],
    it: &IterationSettings,
) -> Result<ReachResult> {
    if !(it.tol > 0.0) {
        return Err(KdvError::InvalidInput("tolerance must be positive".into()));
    }
    let h = op.h();
    let target_norm = grid_l2(y_target, h);
    let mut current = y_target.to_vec();
    let mut residuals = Vec::new();
    let mut norms = Vec::new();
    let mut control;
    let mut converged = false;
    loop {
        norms.push(grid_l2(&current, h));
        control = op.reach(&current)?.u;
        let reached = reach_map(&control, op.grid, it.nonlinear).map_err(|e| e.at("reach map"))?;
        let diff: Vec<f64> = y_target.iter().zip(&reached).map(|(a, b)| a - b).collect();
        residuals.push(grid_l2(&diff, h));
        if residuals.last().copied().unwrap_or(0.0) <= it.tol * target_norm {
            converged = true;
            break;
        }
        if diverging(&residuals, it.divergence_window) {
            return Err(KdvError::Diverged { residuals });
        }
        if residuals.len() > it.max_iter {
            break;
        }
        for (c, d) in current.iter_mut().zip(&diff) {
            *c += d;
        }
    }
    let control_norm = control.l2_norm();
    Ok(ReachResult {
        horizon: op.horizon,
        target: y_target.to_vec(),
        target_norm,
        iterate_norms: norms,
        ratios: ratios(&residuals),
        residuals,
        converged,
        warning: (control_norm > it.smallness_warning)
            .then(|| format!("control norm {control_norm:.3e} above smallness threshold")),
        control,
        control_norm,
        final_iterate: current,
    })
}

/// Newton-Picard null control: `u <- u - L F(u)` with `F(u)` the nonlinear
/// final state from `y0`, started at the linear null control.
pub fn null_control_nonlinear(
    op: &ReachOperator,
    y0: &[f64],
    it: &IterationSettings,
) -> Result<ReachResult> {
    let h = op.h();
    let n0 = grid_l2(y0, h);
    let mut u = op.null(y0)?.u;
    let mut residuals = Vec::new();
    let mut norms = Vec::new();
    let mut converged = false;
    loop {
        norms.push(u.l2_norm());
        let end =
            nonlinear_final(y0, &u, op.grid, it.nonlinear).map_err(|e| e.at("nonlinear solve"))?;
        residuals.push(grid_l2(&end, h));
        if residuals.last().copied().unwrap_or(0.0) <= it.tol * n0 {
            converged = true;
            break;
        }
        if diverging(&residuals, it.divergence_window) {
            return Err(KdvError::Diverged { residuals });
        }
        if residuals.len() > it.max_iter {
            break;
        }
        let correction = op.reach(&end)?.u;
        u = u.combine(1.0, &correction, -1.0);
    }
    let control_norm = u.l2_norm();
    Ok(ReachResult {
        horizon: op.horizon,
        target: vec![0.0; y0.len()],
        target_norm: n0,
        iterate_norms: norms,
        ratios: ratios(&residuals),
        residuals,
        converged,
        warning: (control_norm > it.smallness_warning)
            .then(|| format!("control norm {control_norm:.3e} above smallness threshold")),
        control: u,
        control_norm,
        final_iterate: Vec::new(),
    })
}

/// Residual of a returned control in a fresh solve with `refine` times as
/// many time steps (space grid unchanged).
pub fn reverify(
    y0: &[f64],
    target: &[f64],
    u: &TimeSignal,
    grid: Grid,
    refine: usize,
    nopt: NonlinearOptions,
) -> Result<f64> {
    let fine = grid.with_nt(grid.nt * refine.max(1));
    let end = nonlinear_final(y0, &u.resampled(fine.nt), fine, nopt)?;
    let d: Vec<f64> = end.iter().zip(target).map(|(a, b)| a - b).collect();
    Ok(grid_l2(&d, grid.h()))
}

/// `||P(s u) - (linear final state of s u)||` over a list of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderFit {
    pub scales: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Fit of `ln remainder` against `ln scale`; the slope is the order.
    pub fit: LinearFit,
}

pub fn quadratic_remainder(
    u: &TimeSignal,
    grid: Grid,
    scales: &[f64],
    nopt: NonlinearOptions,
) -> Result<RemainderFit> {
    let zero = vec![0.0; grid.nx];
    let remainders: Vec<f64> = scales
        .par_iter()
        .map(|&s| {
            let us = u.scaled(s);
            let p = nonlinear_final(&zero, &us, grid, nopt)?;
            let l = linear_final(&zero, &us, grid)?;
            let d: Vec<f64> = p.iter().zip(&l).map(|(a, b)| a - b).collect();
            Ok(grid_l2(&d, grid.h()))
        })
        .collect::<Result<_>>()?;
    let lx: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ly: Vec<f64> = remainders.iter().map(|r| r.max(1e-300).ln()).collect();
    Ok(RemainderFit {
        scales: scales.to_vec(),
        remainders,
        fit: linear_fit(&lx, &ly),
    })
}

/// Real combination `2 sum_k (a_k Re phi_k + b_k Im phi_k)` of the first
/// modes, scaled to the requested discrete norm.
pub fn band_limited_state(
    ctx: &ControlContext,
    nx: usize,
    coeffs: &[(usize, f64, f64)],
    norm: f64,
) -> Vec<f64> {
    let h = ctx.length() / (nx + 1) as f64;
    let xs: Vec<f64> = (1..=nx).map(|j| j as f64 * h).collect();
    let mut y = vec![0.0; nx];
    for &(k, a, b) in coeffs {
        let phi = ctx.spectrum.mode(k as i32).sample(&xs);
        for (v, z) in y.iter_mut().zip(&phi) {
            *v += 2.0 * (a * z.re + b * z.im);
        }
    }
    let n = grid_l2(&y, h);
    if n > 0.0 {
        y.iter_mut().for_each(|v| *v *= norm / n);
    }
    y
}

/// [`band_limited_state`] over the first `modes` modes with coefficients
/// drawn uniformly from `[-1, 1]` by a seeded generator.
pub fn random_band_limited_state(
    ctx: &ControlContext,
    nx: usize,
    modes: usize,
    norm: f64,
    seed: u64,
) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(usize, f64, f64)> = (1..=modes)
        .map(|k| {
            (
                k,
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            )
        })
        .collect();
    band_limited_state(ctx, nx, &coeffs, norm)
}
