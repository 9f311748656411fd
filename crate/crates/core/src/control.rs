//! Null control of the Neumann system through the jump system.
//!
//! The jump control `v` solves a moment problem. Running the jump system
//! with `v` and reading its left slope gives the Neumann control
//! `u = v + y_x(., 0)`, which drives the same trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::fit::{linear_fit, stretched_fit, LinearFit, StretchedFit};
use crate::moment::{
    assemble_moment_problem, calibrate_gamma, frequency_table, gram_matrix, minimal_norm_control,
    synthesize_control, verify_moments, Calibration, FrequencyTable, GramSettings, MomentProblem,
    MomentReport, SynthesisAudit, SynthesisSettings, Window, WindowParams, DEFAULT_NPROD,
};
use crate::pde::{
    grid_l2, pair_with, solve_jump_with, solve_neumann_with, Grid, JumpMethod, SolveOptions,
    SourceTerm, Trajectory,
};
use crate::signal::TimeSignal;
use crate::spectral::{solve_modes, Spectrum};
use crate::C64;

/// How the jump control is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Window,
    Gramian,
}

impl std::str::FromStr for Method {
    type Err = KdvError;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "window" => Ok(Method::Window),
            "gramian" => Ok(Method::Gramian),
            _ => Err(KdvError::InvalidInput(format!(
                "unknown method '{s}' (expected window or gramian)"
            ))),
        }
    }
}

/// Spectral data shared by every run at one length.
#[derive(Debug, Clone)]
pub struct ControlContext {
    pub spectrum: Spectrum,
    pub table: FrequencyTable,
}

impl ControlContext {
    pub fn new(length: f64, count: usize, nprod: usize) -> Result<ControlContext> {
        let spectrum = solve_modes(length, count)?;
        let table = frequency_table(length, nprod.max(count))?;
        Ok(ControlContext { spectrum, table })
    }

    pub fn length(&self) -> f64 {
        self.spectrum.length
    }

    pub fn count(&self) -> usize {
        self.spectrum.count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub method: Method,
    /// Interior points of the simulation grids.
    pub nx: usize,
    /// Fixed window parameter; `None` runs [`calibrate_gamma`].
    pub gamma: Option<f64>,
    pub gamma_start: f64,
    pub synthesis: SynthesisSettings,
    pub gram: GramSettings,
    /// Bound on `||y(T)|| / ||y0||` above which the report is flagged.
    pub residual_bound: f64,
    pub jump_method: JumpMethod,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            method: Method::Window,
            nx: 400,
            gamma: None,
            gamma_start: 1.0,
            synthesis: SynthesisSettings {
                nprod: DEFAULT_NPROD,
                ..Default::default()
            },
            gram: GramSettings::default(),
            residual_bound: 1e-2,
            jump_method: JumpMethod::Fd,
        }
    }
}

/// Jump control for a moment problem, with the data of whichever method ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpControl {
    pub v: TimeSignal,
    pub gamma_param: Option<f64>,
    pub calibration: Option<Calibration>,
    pub audit: Option<SynthesisAudit>,
    pub gram_cond: Option<f64>,
}

/// Solve the moment problem with the configured method.
pub fn jump_control(
    problem: &MomentProblem,
    ctx: &ControlContext,
    settings: &ControlSettings,
) -> Result<JumpControl> {
    match settings.method {
        Method::Gramian => {
            let (v, rep) =
                minimal_norm_control(problem, &settings.gram).map_err(|e| e.at("gramian"))?;
            Ok(JumpControl {
                v,
                gamma_param: None,
                calibration: None,
                audit: None,
                gram_cond: Some(rep.cond),
            })
        }
        Method::Window => {
            let syn = &settings.synthesis;
            let count = ctx.count();
            let x = syn.halfwidth(&ctx.table, count);
            let (params, calibration) = match settings.gamma {
                Some(g) => (WindowParams::new(problem.horizon, g), None),
                None => {
                    let cal = calibrate_gamma(problem, &ctx.table, settings.gamma_start, syn)
                        .map_err(|e| e.at("calibrate"))?;
                    (cal.params, Some(cal))
                }
            };
            let window = Window::new(params, x).map_err(|e| e.at("window"))?;
            let (v, audit) = synthesize_control(problem, &ctx.table, &window, syn)
                .map_err(|e| e.at("synthesize"))?;
            Ok(JumpControl {
                v,
                gamma_param: Some(params.gamma_param),
                calibration,
                audit: Some(audit),
                gram_cond: None,
            })
        }
    }
}

/// Relative size of the part of `y0` outside the span of the modes.
pub fn projection_tail(y0: &[f64], spec: &Spectrum, h: f64) -> f64 {
    let xs: Vec<f64> = (1..=y0.len()).map(|j| j as f64 * h).collect();
    let mut y = vec![0.0; y0.len()];
    for m in &spec.modes {
        let phi = m.sample(&xs);
        // coefficient of phi_k in y0 is p_{-k}(y0) = integral y0 conj(phi_k)
        let conj: Vec<C64> = phi.iter().map(|z| z.conj()).collect();
        let c = pair_with(y0, &conj, h);
        for (yj, p) in y.iter_mut().zip(&phi) {
            *yj += (c * p).re;
        }
    }
    let n0 = grid_l2(y0, h);
    if n0 == 0.0 {
        return 0.0;
    }
    let d: Vec<f64> = y0.iter().zip(&y).map(|(a, b)| a - b).collect();
    grid_l2(&d, h) / n0
}

/// Outcome of [`verify_null`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullCheck {
    /// `||y(T)|| / ||y0||`, or `||y(T)||` when `y0 = 0`.
    pub residual: f64,
    /// Set when the residual is absolute because `y0 = 0`.
    pub absolute: bool,
}

/// Fresh Neumann solve with `u` and the relative size of the final state.
pub fn verify_null(y0: &[f64], u: &TimeSignal, grid: Grid) -> Result<NullCheck> {
    let traj = solve_neumann_with(
        y0,
        &SourceTerm::Zero,
        u,
        grid,
        SolveOptions { snapshots: 1 },
    )?;
    let h = grid.h();
    let end = grid_l2(traj.final_state(), h);
    let n0 = grid_l2(y0, h);
    Ok(if n0 == 0.0 {
        NullCheck {
            residual: end,
            absolute: true,
        }
    } else {
        NullCheck {
            residual: end / n0,
            absolute: false,
        }
    })
}

/// `v = u - y_x(., 0)` read from the Neumann solve driven by `u`.
pub fn transfer_from_neumann(u: &TimeSignal, y0: &[f64], grid: Grid) -> Result<TimeSignal> {
    let traj = solve_neumann_with(
        y0,
        &SourceTerm::Zero,
        u,
        grid,
        SolveOptions { snapshots: 1 },
    )?;
    let u = u.resampled(grid.nt);
    let values = u
        .values
        .iter()
        .zip(&traj.trace0)
        .map(|(z, s)| z - s)
        .collect();
    Ok(TimeSignal { values, ..u })
}

/// `u = v + y_x(., 0)` read from the jump solve driven by `v`.
pub fn transfer_to_neumann(v: &TimeSignal, jump: &Trajectory) -> TimeSignal {
    let v = v.resampled(jump.grid.nt);
    let values = v
        .values
        .iter()
        .zip(&jump.trace0)
        .map(|(z, s)| z + s)
        .collect();
    TimeSignal { values, ..v }
}

/// `max_n ||a(t_n) - b(t_n)|| / max_n ||a(t_n)||` over the shared snapshots.
pub fn trajectory_discrepancy(a: &Trajectory, b: &Trajectory) -> f64 {
    let h = a.grid.h();
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (ya, yb) in a.snapshots.iter().zip(&b.snapshots) {
        let d: Vec<f64> = ya.iter().zip(yb).map(|(p, q)| p - q).collect();
        diff = diff.max(grid_l2(&d, h));
        scale = scale.max(grid_l2(ya, h));
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Everything produced by one linear null-control run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub method: Method,
    pub count: usize,
    pub horizon: f64,
    pub gamma_param: Option<f64>,
    pub calibration: Option<Calibration>,
    pub audit: Option<SynthesisAudit>,
    pub gram_cond: Option<f64>,
    pub problem: MomentProblem,
    pub moments: MomentReport,
    pub control_v: TimeSignal,
    pub control_u: TimeSignal,
    pub norm_u: f64,
    pub norm_v: f64,
    pub grid: Grid,
    pub projection_tail: f64,
    pub verification: NullCheck,
    /// Jump trajectory against the Neumann trajectory driven by `u`.
    pub transfer_discrepancy: f64,
    /// `verification.residual <= residual_bound`.
    pub passed: bool,
}

/// Moment problem, jump control, transfer, and an independent Neumann check.
pub fn null_control_linear(
    y0: &[f64],
    ctx: &ControlContext,
    horizon: f64,
    settings: &ControlSettings,
) -> Result<SynthesisReport> {
    if y0.len() != settings.nx {
        return Err(KdvError::InvalidInput(format!(
            "initial state has {} values, N_x = {}",
            y0.len(),
            settings.nx
        )));
    }
    let length = ctx.length();
    let h = length / (settings.nx + 1) as f64;
    let problem =
        assemble_moment_problem(y0, &ctx.spectrum, horizon, h).map_err(|e| e.at("moment"))?;
    let jc = jump_control(&problem, ctx, settings)?;
    let moments = verify_moments(&jc.v, &problem, &[]);
    let grid = Grid::matched(length, settings.nx, &jc.v).map_err(|e| e.at("grid"))?;
    let opts = SolveOptions::default();
    let jump = solve_jump_with(
        y0,
        &SourceTerm::Zero,
        &jc.v,
        grid,
        settings.jump_method,
        Some(&ctx.spectrum),
        opts,
    )
    .map_err(|e| e.at("jump"))?;
    let u = transfer_to_neumann(&jc.v, &jump);
    let neumann =
        solve_neumann_with(y0, &SourceTerm::Zero, &u, grid, opts).map_err(|e| e.at("neumann"))?;
    let n0 = grid_l2(y0, h);
    let end = grid_l2(neumann.final_state(), h);
    let verification = if n0 == 0.0 {
        NullCheck {
            residual: end,
            absolute: true,
        }
    } else {
        NullCheck {
            residual: end / n0,
            absolute: false,
        }
    };
    let gram_cond = jc
        .gram_cond
        .or_else(|| gram_condition(&problem.frequencies, horizon));
    Ok(SynthesisReport {
        method: settings.method,
        count: ctx.count(),
        horizon,
        gamma_param: jc.gamma_param,
        calibration: jc.calibration,
        audit: jc.audit,
        gram_cond,
        moments,
        norm_u: u.l2_norm(),
        norm_v: jc.v.l2_norm(),
        control_v: jc.v,
        control_u: u,
        grid,
        projection_tail: projection_tail(y0, &ctx.spectrum, h),
        transfer_discrepancy: trajectory_discrepancy(&jump, &neumann),
        passed: verification.residual <= settings.residual_bound,
        verification,
        problem,
    })
}

/// Condition number of the Gram matrix of `e^{i lambda_k t}` on `(0, T)`.
pub fn gram_condition(freqs: &[f64], horizon: f64) -> Option<f64> {
    let eig = gram_matrix(freqs, horizon).symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    (lo > 0.0).then(|| hi / lo)
}

impl SynthesisReport {
    /// Recompute the verification residual and the moment residuals from
    /// the stored signals; returns the largest absolute difference.
    pub fn recheck(&self, y0: &[f64]) -> Result<f64> {
        let check = verify_null(y0, &self.control_u, self.grid)?;
        let m = verify_moments(&self.control_v, &self.problem, &[]);
        let mut diff = (check.residual - self.verification.residual).abs();
        for (a, b) in m.residuals.iter().zip(&self.moments.residuals) {
            diff = diff.max((a.1 - b.1).abs());
        }
        Ok(diff)
    }
}

/// One horizon of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub horizon: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    pub residual: f64,
    pub cond_estimate: Option<f64>,
    pub gamma_param: Option<f64>,
    /// Set when the run failed or missed the residual bound; such entries
    /// are excluded from the fit.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFit {
    /// `ln ||u|| = slope * T^{-1/2} + intercept`.
    pub fixed: LinearFit,
    /// Residuals of the fixed-exponent fit, per included entry.
    pub residuals: Vec<f64>,
    /// `ln ||u|| = offset - coefficient * (1/T)^exponent`, for diagnostics.
    pub free: Option<StretchedFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub method: Method,
    pub count: usize,
    /// Sorted by decreasing horizon.
    pub entries: Vec<CostEntry>,
    pub fit: Option<CostFit>,
}

/// Fit of `ln ||u||` against `T^{-1/2}` over the entries without failures.
pub fn fit_cost(entries: &[CostEntry]) -> Option<CostFit> {
    let ok: Vec<&CostEntry> = entries
        .iter()
        .filter(|e| e.failure.is_none() && e.norm_u > 0.0)
        .collect();
    if ok.len() < 2 {
        return None;
    }
    let x: Vec<f64> = ok.iter().map(|e| e.horizon.powf(-0.5)).collect();
    let y: Vec<f64> = ok.iter().map(|e| e.norm_u.ln()).collect();
    let fixed = linear_fit(&x, &y);
    let residuals = x
        .iter()
        .zip(&y)
        .map(|(a, b)| b - (fixed.slope * a + fixed.intercept))
        .collect();
    let free = (ok.len() >= 4).then(|| {
        let inv: Vec<f64> = ok.iter().map(|e| 1.0 / e.horizon).collect();
        stretched_fit(&inv, &y, (0.05, 2.0))
    });
    Some(CostFit {
        fixed,
        residuals,
        free,
    })
}

/// Null-control cost over a list of horizons (run in parallel).
pub fn cost_sweep(
    y0: &[f64],
    ctx: &ControlContext,
    horizons: &[f64],
    settings: &ControlSettings,
) -> Result<CostCurve> {
    if horizons.is_empty() || horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(KdvError::InvalidInput(
            "sweep needs positive horizons".into(),
        ));
    }
    if horizons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KdvError::InvalidInput(
            "sweep horizons must be strictly decreasing".into(),
        ));
    }
    let entries: Vec<CostEntry> = horizons
        .par_iter()
        .map(|&t| match null_control_linear(y0, ctx, t, settings) {
            Ok(r) => CostEntry {
                horizon: t,
                norm_u: r.norm_u,
                norm_v: r.norm_v,
                residual: r.verification.residual,
                cond_estimate: r.gram_cond,
                gamma_param: r.gamma_param,
                failure: (!r.passed)
                    .then(|| format!("residual {:.3e} above bound", r.verification.residual)),
            },
            Err(e) => CostEntry {
                horizon: t,
                norm_u: f64::NAN,
                norm_v: f64::NAN,
                residual: f64::NAN,
                cond_estimate: gram_condition(
                    &ctx.spectrum
                        .modes
                        .iter()
                        .map(|m| m.lambda)
                        .collect::<Vec<_>>(),
                    t,
                ),
                gamma_param: None,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let fit = fit_cost(&entries);
    Ok(CostCurve {
        method: settings.method,
        count: ctx.count(),
        entries,
        fit,
    })
}

/// `y0 = phi_1 + phi_{-1}` on the interior grid points.
pub fn first_mode_state(spec: &Spectrum, nx: usize) -> Vec<f64> {
    let h = spec.length / (nx + 1) as f64;
    let xs: Vec<f64> = (1..=nx).map(|j| j as f64 * h).collect();
    spec.mode(1)
        .sample(&xs)
        .iter()
        .map(|z| 2.0 * z.re)
        .collect()
}
