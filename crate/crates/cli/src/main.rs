//! Command-line front end: `kdv <subcommand> [flags]`.
//!
//! Exit status: 0 on success, 1 when a computation fails (or an acceptance
//! check fails), 2 for usage and configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kdv_core::acceptance;
use kdv_core::config::{NonlinearMode, RunConfig};
use kdv_core::control::{cost_sweep, first_mode_state, null_control_linear, ControlContext};
use kdv_core::io::{
    spectrum_json, write_cost_csv, write_json, write_signal_csv, write_snapshot_csv,
    write_state_csv, write_trace_csv, ReachSummary,
};
use kdv_core::nonlinear::{
    fixed_point_reach, null_control_nonlinear, random_band_limited_state, reverify, ReachOperator,
};
use kdv_core::pde::{grid_l2, norms, solve_jump, solve_neumann, solve_nonlinear, Grid, SourceTerm};
use kdv_core::spectral::{
    boundary_slope_check, gap_report, is_critical, solve_modes, DEFAULT_SLOPE_THRESHOLD,
};
use kdv_core::{KdvError, TimeSignal};

/// Environment variable naming the default output directory.
const OUTPUT_ENV: &str = "KDV_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "kdv",
    version,
    about = "Moment-method boundary control for the KdV equation"
)]
struct Cli {
    /// `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $KDV_OUTPUT_DIR, then ./kdv-out)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for parallel stages (0 = all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    #[arg(long = "L")]
    length: Option<String>,
    /// Horizon; `sweep` takes a comma-separated list
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long = "K")]
    count: Option<String>,
    #[arg(long = "N-prod")]
    nprod: Option<String>,
    #[arg(long = "nx")]
    nx: Option<String>,
    /// window or gramian
    #[arg(long)]
    method: Option<String>,
    /// fd or modal
    #[arg(long = "jump-method")]
    jump_method: Option<String>,
    /// Fixed window parameter, or `auto`
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// Norm of the generated initial state or target
    #[arg(long)]
    amplitude: Option<String>,
    #[arg(long = "target-modes")]
    target_modes: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenfrequencies and eigenmodes
    Spectrum(Common),
    /// Test a length against the critical set
    Critical {
        #[arg(long = "L")]
        length: Option<String>,
        /// Distance below which a length counts as critical
        #[arg(long = "tol")]
        critical_tol: Option<String>,
    },
    /// Linear null control of the first mode with either method
    Synth(Common),
    /// Time-domain simulation of one system
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "neumann")]
        system: System,
        /// Control CSV (`t,re,im`); zero control when omitted
        #[arg(long)]
        control: Option<PathBuf>,
        /// Time steps when no control file fixes them
        #[arg(long, default_value_t = 4000)]
        nt: usize,
    },
    /// Null-control cost over a list of horizons
    Sweep(Common),
    /// Nonlinear reachability or null control
    Nonlinear {
        #[command(flatten)]
        common: Common,
        /// reach or null
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run the acceptance checks
    Accept {
        /// Comma-separated ids (default: all)
        #[arg(long)]
        only: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum System {
    Neumann,
    Jump,
    Nonlinear,
}

fn overrides(c: &Common, list_horizon: bool) -> Vec<(&'static str, String)> {
    let t_key = if list_horizon { "T_list" } else { "T" };
    [
        ("L", &c.length),
        (t_key, &c.horizon),
        ("K", &c.count),
        ("N_prod", &c.nprod),
        ("N_x", &c.nx),
        ("method", &c.method),
        ("jump_method", &c.jump_method),
        ("gamma", &c.gamma),
        ("seed", &c.seed),
        ("tol", &c.tol),
        ("max_iter", &c.max_iter),
        ("amplitude", &c.amplitude),
        ("target_modes", &c.target_modes),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
    .collect()
}

fn load(cli: &Cli, mut pairs: Vec<(&'static str, String)>) -> Result<RunConfig> {
    let mut base = Vec::new();
    if let Ok(dir) = std::env::var(OUTPUT_ENV) {
        base.push(("output", dir));
    }
    if let Some(o) = &cli.output {
        pairs.push(("output", o.display().to_string()));
    }
    if let Some(w) = cli.workers {
        pairs.push(("workers", w.to_string()));
    }
    // environment < file < flags
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(base)?;
    if let Some(p) = &cli.config {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_overrides(pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating {}", cfg.output.display()))?;
    Ok(cfg.output.join(name))
}

/// First eigenmode sampled on the interior grid, scaled to `amplitude`.
fn initial_state(cfg: &RunConfig, spec: &kdv_core::spectral::Spectrum) -> Vec<f64> {
    let mut y0 = first_mode_state(spec, cfg.nx);
    let n0 = grid_l2(&y0, cfg.length / (cfg.nx + 1) as f64);
    y0.iter_mut().for_each(|v| *v *= cfg.amplitude / n0);
    y0
}

fn spectrum(cfg: &RunConfig) -> Result<()> {
    let spec = solve_modes(cfg.length, cfg.count)?;
    let slopes = boundary_slope_check(&spec, DEFAULT_SLOPE_THRESHOLD);
    let gaps = gap_report(&spec)?;
    let path = out_path(cfg, "spectrum.json")?;
    write_json(
        &path,
        "spectrum",
        cfg,
        &json!({ "spectrum": spectrum_json(&spec), "slopes": slopes, "gaps": gaps }),
    )?;
    let lambdas: Vec<String> = spec
        .positive_frequencies()
        .iter()
        .map(|l| format!("{l:.6}"))
        .collect();
    println!(
        "L = {}: lambda_1..{} = {}; min |phi'(L)| = {:.3e} -> {}",
        cfg.length,
        cfg.count,
        lambdas.join(", "),
        slopes.min_slope,
        path.display()
    );
    Ok(())
}

fn critical(cfg: &RunConfig) -> Result<()> {
    let check = is_critical(cfg.length, cfg.critical_tol);
    let path = out_path(cfg, "critical.json")?;
    write_json(&path, "critical", cfg, &check)?;
    println!(
        "L = {}: critical={}, nearest {:.10} (distance {:.3e}) -> {}",
        cfg.length,
        check.critical,
        check.nearest,
        check.distance,
        path.display()
    );
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let ctx = ControlContext::new(cfg.length, cfg.count, cfg.nprod)?;
    let settings = cfg.control_settings();
    let y0 = initial_state(cfg, &ctx.spectrum);
    let r = null_control_linear(&y0, &ctx, cfg.horizon, &settings)?;
    write_signal_csv(&out_path(cfg, "control_v.csv")?, cfg, &r.control_v)?;
    write_signal_csv(&out_path(cfg, "control_u.csv")?, cfg, &r.control_u)?;
    let summary = json!({
        "method": r.method,
        "horizon": r.horizon,
        "gamma": r.gamma_param,
        "calibration": r.calibration,
        "audit": r.audit,
        "gram_cond": r.gram_cond,
        "moments": r.moments,
        "norm_u": r.norm_u,
        "norm_v": r.norm_v,
        "grid": r.grid,
        "projection_tail": r.projection_tail,
        "residual": r.verification.residual,
        "transfer_discrepancy": r.transfer_discrepancy,
        "passed": r.passed,
    });
    write_json(&out_path(cfg, "synth.json")?, "synth", cfg, &summary)?;
    println!(
        "synth {:?} T = {}: residual {:.3e}, max moment residual {:.2e}, ||u|| {:.4}, ||v|| {:.4} -> {}",
        r.method,
        r.horizon,
        r.verification.residual,
        r.moments.max_residual,
        r.norm_u,
        r.norm_v,
        cfg.output.display()
    );
    if !r.passed {
        bail!(
            "null-control residual {:.3e} above bound",
            r.verification.residual
        );
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, system: System, control: Option<&Path>, nt: usize) -> Result<()> {
    let spec = solve_modes(cfg.length, cfg.count.min(2))?;
    let y0 = initial_state(cfg, &spec);
    let h = cfg.length / (cfg.nx + 1) as f64;
    let ctrl = match control {
        Some(p) => kdv_core::io::read_signal_csv(p)?,
        None => TimeSignal::zeros(cfg.horizon, nt),
    };
    let grid = Grid::matched(cfg.length, cfg.nx, &ctrl)?;
    let traj = match system {
        System::Neumann => solve_neumann(&y0, &SourceTerm::Zero, &ctrl, grid)?,
        System::Jump => solve_jump(
            &y0,
            &SourceTerm::Zero,
            &ctrl,
            grid,
            cfg.jump_method,
            Some(&spec),
        )?,
        System::Nonlinear => solve_nonlinear(&y0, &ctrl, grid)?,
    };
    write_trace_csv(&out_path(cfg, "trace.csv")?, cfg, &traj)?;
    write_snapshot_csv(&out_path(cfg, "snapshots.csv")?, cfg, &traj)?;
    let nr = norms(&traj);
    let end = grid_l2(traj.final_state(), h);
    write_json(
        &out_path(cfg, "simulate.json")?,
        "simulate",
        cfg,
        &json!({ "method": traj.method, "grid": traj.grid, "norms": nr, "final_norm": end, "initial_norm": cfg.amplitude }),
    )?;
    println!(
        "{}: ||y(0)|| {:.3e}, ||y(T)|| {:.3e}, sup ||y|| {:.3e} -> {}",
        traj.method,
        cfg.amplitude,
        end,
        nr.sup_l2,
        cfg.output.display()
    );
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let ctx = ControlContext::new(cfg.length, cfg.count, cfg.nprod)?;
    let y0 = initial_state(cfg, &ctx.spectrum);
    let curve = cost_sweep(&y0, &ctx, &cfg.horizons, &cfg.control_settings())?;
    write_cost_csv(&out_path(cfg, "cost.csv")?, cfg, &curve)?;
    write_json(&out_path(cfg, "cost.json")?, "cost", cfg, &curve)?;
    match &curve.fit {
        Some(f) => println!(
            "sweep over {} horizons: ln||u|| = {:.4} T^(-1/2) + {:.4} (R^2 {:.4}) -> {}",
            curve.entries.len(),
            f.fixed.slope,
            f.fixed.intercept,
            f.fixed.r2,
            cfg.output.display()
        ),
        None => bail!("too few successful horizons for a cost fit"),
    }
    Ok(())
}

fn nonlinear(cfg: &RunConfig) -> Result<()> {
    let ctx = ControlContext::new(cfg.length, cfg.count, cfg.nprod)?;
    let op = ReachOperator::new(&ctx, cfg.horizon, &cfg.control_settings())?;
    let state = random_band_limited_state(&ctx, cfg.nx, cfg.target_modes, cfg.amplitude, cfg.seed);
    let it = cfg.iteration_settings();
    let zero = vec![0.0; cfg.nx];
    let (result, fresh) = match cfg.mode {
        NonlinearMode::Reach => {
            let r = fixed_point_reach(&op, &state, &it)?;
            let fresh = reverify(&zero, &state, &r.control, op.grid, 2, it.nonlinear)?;
            (r, fresh)
        }
        NonlinearMode::Null => {
            let r = null_control_nonlinear(&op, &state, &it)?;
            let fresh = reverify(&state, &zero, &r.control, op.grid, 2, it.nonlinear)?;
            (r, fresh)
        }
    };
    let xs = op.grid.xs();
    write_state_csv(&out_path(cfg, "state.csv")?, cfg, &xs, &state)?;
    write_signal_csv(&out_path(cfg, "control.csv")?, cfg, &result.control)?;
    let summary = ReachSummary::from(&result);
    write_json(
        &out_path(cfg, "nonlinear.json")?,
        "nonlinear",
        cfg,
        &json!({ "mode": cfg.mode, "result": summary, "fresh_residual": fresh, "gamma": op.gamma_param }),
    )?;
    println!(
        "{:?}: {} iterations, residual {:.3e} ({:.2e} relative, fresh {:.2e}), converged={}, ||u|| {:.4} -> {}",
        cfg.mode,
        result.iterations(),
        result.final_residual(),
        result.final_residual() / result.target_norm,
        fresh / result.target_norm,
        result.converged,
        result.control_norm,
        cfg.output.display()
    );
    if !result.converged {
        bail!(
            "iteration did not reach tolerance in {} iterations",
            cfg.max_iter
        );
    }
    Ok(())
}

fn accept(cfg: &RunConfig, only: Option<&str>) -> Result<()> {
    let ids: Vec<u8> = match only {
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim().parse::<u8>().map_err(|_| KdvError::Config {
                    line: 0,
                    message: format!("bad id '{t}'"),
                })
            })
            .collect::<std::result::Result<_, _>>()?,
        None => acceptance::CRITERIA.iter().map(|c| c.0).collect(),
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = acceptance::run(id);
        println!("{o}");
        outcomes.push(o);
    }
    write_json(&out_path(cfg, "accept.json")?, "accept", cfg, &outcomes)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed > 0 {
        bail!("{failed} acceptance checks failed");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.command {
        Command::Sweep(c) => load(cli, overrides(c, true))?,
        Command::Critical {
            length,
            critical_tol,
        } => {
            let pairs = [("L", length), ("critical_tol", critical_tol)];
            let pairs = pairs
                .into_iter()
                .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
                .collect();
            load(cli, pairs)?
        }
        Command::Nonlinear { common, mode } => {
            let mut p = overrides(common, false);
            if let Some(m) = mode {
                p.push(("mode", m.clone()));
            }
            load(cli, p)?
        }
        Command::Spectrum(c) | Command::Synth(c) | Command::Simulate { common: c, .. } => {
            load(cli, overrides(c, false))?
        }
        Command::Accept { .. } => load(cli, Vec::new())?,
    };
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring workers")?;
    }
    match &cli.command {
        Command::Spectrum(_) => spectrum(&cfg),
        Command::Critical { .. } => critical(&cfg),
        Command::Synth(_) => synth(&cfg),
        Command::Simulate {
            system,
            control,
            nt,
            ..
        } => simulate(&cfg, *system, control.as_deref(), *nt),
        Command::Sweep(_) => sweep(&cfg),
        Command::Nonlinear { .. } => nonlinear(&cfg),
        Command::Accept { only } => accept(&cfg, only.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<KdvError>(), Some(KdvError::Config { .. }));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        super::Cli::command().debug_assert();
    }
}
