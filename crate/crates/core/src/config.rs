//! Run configuration: a line-based `key = value` file, command-line
//! overrides on top, then validation.
//!
//! ```text
//! # comment
//! L = 1
//! T_list = 1, 0.5, 0.25
//! K = 8
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlSettings, Method};
use crate::error::{KdvError, Result};
use crate::moment::{SynthesisSettings, DEFAULT_NPROD};
use crate::nonlinear::IterationSettings;
use crate::pde::JumpMethod;

/// Which nonlinear problem the `nonlinear` subcommand solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearMode {
    Reach,
    Null,
}

impl std::str::FromStr for NonlinearMode {
    type Err = KdvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(NonlinearMode::Reach),
            "null" => Ok(NonlinearMode::Null),
            _ => Err(KdvError::InvalidInput(format!(
                "unknown mode '{s}' (expected reach or null)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Sweep horizons, strictly decreasing; the first entry plays the role
    /// of the upper horizon `T0`.
    #[serde(rename = "T_list")]
    pub horizons: Vec<f64>,
    #[serde(rename = "K")]
    pub count: usize,
    #[serde(rename = "N_prod")]
    pub nprod: usize,
    #[serde(rename = "N_x")]
    pub nx: usize,
    pub method: Method,
    pub jump_method: JumpMethod,
    /// Fixed window parameter; calibrated when absent.
    pub gamma: Option<f64>,
    pub output: PathBuf,
    /// Seed for the random coefficients of generated targets.
    pub seed: u64,
    /// Worker threads for parallel stages (0 = all cores).
    pub workers: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// `L2` norm of the generated initial state or target.
    pub amplitude: f64,
    /// Number of modes spanned by generated nonlinear targets.
    pub target_modes: usize,
    pub mode: NonlinearMode,
    /// Critical-length tolerance.
    pub critical_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            length: 1.0,
            horizon: 1.0,
            horizons: vec![1.0, 0.5, 0.25, 0.125],
            count: 8,
            nprod: DEFAULT_NPROD,
            nx: 400,
            method: Method::Window,
            jump_method: JumpMethod::Fd,
            gamma: None,
            output: PathBuf::from("kdv-out"),
            seed: 0,
            workers: 0,
            tol: 5e-4,
            max_iter: 20,
            amplitude: 1e-2,
            target_modes: 2,
            mode: NonlinearMode::Reach,
            critical_tol: 1e-9,
        }
    }
}

pub const KEYS: &[&str] = &[
    "L",
    "T",
    "T_list",
    "K",
    "N_prod",
    "N_x",
    "method",
    "jump_method",
    "gamma",
    "output",
    "seed",
    "workers",
    "tol",
    "max_iter",
    "amplitude",
    "target_modes",
    "mode",
    "critical_tol",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("malformed value '{value}' for {key}"))
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "L" => self.length = num(key, value)?,
            "T" => self.horizon = num(key, value)?,
            "T_list" => {
                self.horizons = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "K" => self.count = num(key, value)?,
            "N_prod" => self.nprod = num(key, value)?,
            "N_x" => self.nx = num(key, value)?,
            "method" => self.method = value.parse().map_err(|e: KdvError| e.to_string())?,
            "jump_method" => {
                self.jump_method = match value {
                    "fd" => JumpMethod::Fd,
                    "modal" => JumpMethod::Modal,
                    _ => {
                        return Err(format!(
                            "unknown jump_method '{value}' (expected fd or modal)"
                        ))
                    }
                }
            }
            "gamma" => {
                self.gamma = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "output" => self.output = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "amplitude" => self.amplitude = num(key, value)?,
            "target_modes" => self.target_modes = num(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e: KdvError| e.to_string())?,
            "critical_tol" => self.critical_tol = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parse `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| KdvError::Config {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            self.set(key.trim(), value)
                .map_err(|message| KdvError::Config {
                    line: i + 1,
                    message,
                })?;
        }
        Ok(())
    }

    /// Apply command-line overrides; errors carry line 0.
    pub fn apply_overrides<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, &value)
                .map_err(|message| KdvError::Config { line: 0, message })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(KdvError::Config { line: 0, message });
        let positive = [
            ("L", self.length),
            ("T", self.horizon),
            ("tol", self.tol),
            ("amplitude", self.amplitude),
            ("critical_tol", self.critical_tol),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive and finite, got {v}"));
            }
        }
        if self.count == 0 {
            return bad("K must be at least 1".into());
        }
        if self.nprod < self.count {
            return bad(format!(
                "N_prod = {} must be at least K = {}",
                self.nprod, self.count
            ));
        }
        if self.nx < 16 || self.nx % 2 == 1 {
            return bad(format!("N_x must be even and at least 16, got {}", self.nx));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("T_list needs positive horizons".into());
        }
        if self.horizons.windows(2).any(|w| w[1] >= w[0]) {
            return bad("T_list must be sorted in strictly decreasing order".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if self.target_modes == 0 || self.target_modes > self.count {
            return bad(format!(
                "target_modes must lie in 1..=K, got {}",
                self.target_modes
            ));
        }
        Ok(())
    }

    pub fn control_settings(&self) -> ControlSettings {
        ControlSettings {
            method: self.method,
            nx: self.nx,
            gamma: self.gamma,
            jump_method: self.jump_method,
            synthesis: SynthesisSettings {
                nprod: self.nprod,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn iteration_settings(&self) -> IterationSettings {
        IterationSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

/// Read, override and validate.
pub fn parse_config(path: Option<&Path>, overrides: Vec<(&str, String)>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        cfg.apply_text(&std::fs::read_to_string(p)?)?;
    }
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let mut c = RunConfig::default();
        c.apply_text("L = 2\nT = 0.5\n").unwrap();
        c.validate().unwrap();
        assert_eq!(c.length, 2.0);
        assert_eq!(c.horizon, 0.5);
        assert_eq!(c.count, 8);
    }

    #[test]
    fn zero_modes_rejected() {
        let mut c = RunConfig::default();
        c.apply_text("K = 0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_key_names_line() {
        let mut c = RunConfig::default();
        match c.apply_text("# header\nL = 1\nfoo = 3\n") {
            Err(KdvError::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("foo"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_value_names_line() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.apply_text("K = eight"),
            Err(KdvError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn flag_overrides_file() {
        let mut c = RunConfig::default();
        c.apply_text("K = 8").unwrap();
        c.apply_overrides([("K", "12".to_string())]).unwrap();
        assert_eq!(c.count, 12);
    }

    #[test]
    fn unsorted_horizons_rejected() {
        let mut c = RunConfig::default();
        c.apply_text("T_list = 0.5, 1").unwrap();
        assert!(c.validate().is_err());
    }
}
