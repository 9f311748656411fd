//! Output files. JSON files are wrapped as
//! `{"version": .., "kind": .., "config": .., "data": ..}`; CSV files start
//! with `# version ..` and `# config {..}` comment lines followed by a
//! header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::control::CostCurve;
use crate::error::{KdvError, Result};
use crate::nonlinear::ReachResult;
use crate::pde::Trajectory;
use crate::signal::TimeSignal;
use crate::spectral::Spectrum;
use crate::C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// `phi_k(x) = sum_j coeffs_j exp(roots_j (x - anchors_j))`.
pub fn spectrum_json(spec: &Spectrum) -> Value {
    let modes: Vec<Value> = spec
        .modes
        .iter()
        .map(|m| {
            json!({
                "k": m.k,
                "lambda": m.lambda,
                "roots": m.roots.map(pair),
                "coeffs": m.scaled_coeffs.map(pair),
                "anchors": m.anchors,
                "slope0": pair(m.slope0),
                "slopeL": pair(m.slope_l),
            })
        })
        .collect();
    json!({ "L": spec.length, "K": spec.count, "near_zero_root": spec.near_zero_root, "modes": modes })
}

/// Norms and ratios of an iteration; the control goes to its own CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub horizon: f64,
    pub target_norm: f64,
    pub iterate_norms: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub mean_ratio: Option<f64>,
    pub converged: bool,
    pub control_norm: f64,
    pub warning: Option<String>,
}

impl From<&ReachResult> for ReachSummary {
    fn from(r: &ReachResult) -> Self {
        ReachSummary {
            horizon: r.horizon,
            target_norm: r.target_norm,
            iterate_norms: r.iterate_norms.clone(),
            residuals: r.residuals.clone(),
            ratios: r.ratios.clone(),
            mean_ratio: r.mean_ratio(),
            converged: r.converged,
            control_norm: r.control_norm,
            warning: r.warning.clone(),
        }
    }
}

pub fn write_json(path: &Path, kind: &str, cfg: &RunConfig, data: &impl Serialize) -> Result<()> {
    let doc = json!({ "version": VERSION, "kind": kind, "config": cfg, "data": data });
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> KdvError {
    KdvError::Io(std::io::Error::other(e))
}

/// Write the metadata lines, a header, and the rows.
pub fn write_csv<R, I>(path: &Path, cfg: &RunConfig, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# version {VERSION}")?;
    writeln!(file, "# config {}", serde_json::to_string(cfg)?)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn f(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_signal_csv(path: &Path, cfg: &RunConfig, s: &TimeSignal) -> Result<()> {
    let rows = s
        .times()
        .into_iter()
        .zip(&s.values)
        .map(|(t, z)| vec![f(t), f(z.re), f(z.im)]);
    write_csv(path, cfg, &["t", "re", "im"], rows)
}

/// Read a signal written by [`write_signal_csv`] (uniform `t` assumed).
pub fn read_signal_csv(path: &Path) -> Result<TimeSignal> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let get = |j: usize| -> Result<f64> {
            rec.get(j).unwrap_or("0").trim().parse().map_err(|_| {
                KdvError::InvalidInput(format!(
                    "{}: bad number on data row {}",
                    path.display(),
                    i + 1
                ))
            })
        };
        times.push(get(0)?);
        values.push(C64::new(get(1)?, if rec.len() > 2 { get(2)? } else { 0.0 }));
    }
    if values.len() < 2 || times[0] != 0.0 {
        return Err(KdvError::InvalidInput(format!(
            "{}: need at least two rows starting at t = 0",
            path.display()
        )));
    }
    Ok(TimeSignal {
        horizon: *times.last().unwrap_or(&0.0),
        values,
        max_imag_ratio: 0.0,
    })
}

pub fn write_cost_csv(path: &Path, cfg: &RunConfig, curve: &CostCurve) -> Result<()> {
    let rows = curve.entries.iter().map(|e| {
        vec![
            f(e.horizon),
            f(e.horizon.powf(-0.5)),
            f(e.norm_u),
            f(e.norm_v),
            f(e.residual),
            e.cond_estimate.map(f).unwrap_or_default(),
        ]
    });
    write_csv(
        path,
        cfg,
        &[
            "T",
            "inv_sqrt_T",
            "norm_u",
            "norm_v",
            "residual",
            "cond_estimate",
        ],
        rows,
    )
}

pub fn write_trace_csv(path: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    let dt = traj.grid.dt();
    let rows = traj
        .trace0
        .iter()
        .zip(&traj.trace_l)
        .enumerate()
        .map(|(n, (a, b))| vec![f(n as f64 * dt), f(*a), f(*b)]);
    write_csv(path, cfg, &["t", "y_x_0", "y_x_L"], rows)
}

/// Long format: one row per stored snapshot and interior point.
pub fn write_snapshot_csv(path: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    let dt = traj.grid.dt();
    let xs = traj.grid.xs();
    let rows = traj
        .snapshot_steps
        .iter()
        .zip(&traj.snapshots)
        .flat_map(|(&s, y)| {
            let t = s as f64 * dt;
            xs.iter()
                .zip(y)
                .map(move |(x, v)| vec![f(t), f(*x), f(*v)])
                .collect::<Vec<_>>()
        });
    write_csv(path, cfg, &["t", "x", "y"], rows)
}

pub fn write_state_csv(path: &Path, cfg: &RunConfig, xs: &[f64], y: &[f64]) -> Result<()> {
    write_csv(
        path,
        cfg,
        &["x", "y"],
        xs.iter().zip(y).map(|(x, v)| vec![f(*x), f(*v)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_round_trip() {
        let dir = std::env::temp_dir().join(format!("kdv-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("s.csv");
        let s = TimeSignal::from_fn(0.5, 10, |t| C64::new(t.sin(), -t));
        write_signal_csv(&p, &RunConfig::default(), &s).unwrap();
        let r = read_signal_csv(&p).unwrap();
        assert_eq!(r.values.len(), 11);
        assert!(r.rel_distance(&s) < 1e-14);
        std::fs::remove_dir_all(&dir).ok();
    }
}
