//! Uniformly sampled complex signals on `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::linalg::trapz;
use crate::C64;

/// Samples `v(t_n)`, `t_n = n T / N_t`, `n = 0..=N_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignal {
    pub horizon: f64,
    pub values: Vec<C64>,
    /// Largest `|Im v| / max |Re v|` observed before realification
    /// (0 for signals that were real to begin with).
    pub max_imag_ratio: f64,
}

impl TimeSignal {
    pub fn zeros(horizon: f64, steps: usize) -> Self {
        TimeSignal {
            horizon,
            values: vec![C64::new(0.0, 0.0); steps + 1],
            max_imag_ratio: 0.0,
        }
    }

    pub fn from_real(horizon: f64, values: &[f64]) -> Self {
        TimeSignal {
            horizon,
            values: values.iter().map(|&v| C64::new(v, 0.0)).collect(),
            max_imag_ratio: 0.0,
        }
    }

    pub fn from_fn(horizon: f64, steps: usize, f: impl Fn(f64) -> C64) -> Self {
        let dt = horizon / steps as f64;
        TimeSignal {
            horizon,
            values: (0..=steps).map(|n| f(n as f64 * dt)).collect(),
            max_imag_ratio: 0.0,
        }
    }

    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps().max(1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.values.len()).map(|n| n as f64 * dt).collect()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    /// Ratio `max |Im| / max |Re|` of the current samples.
    pub fn imag_ratio(&self) -> f64 {
        let re = self.values.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let im = self.values.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if im == 0.0 {
            0.0
        } else if re == 0.0 {
            f64::INFINITY
        } else {
            im / re
        }
    }

    /// Drop imaginary parts, recording their relative size.
    pub fn realified(mut self) -> Self {
        self.max_imag_ratio = self.max_imag_ratio.max(self.imag_ratio());
        self.values.iter_mut().for_each(|z| z.im = 0.0);
        self
    }

    /// `(integral_0^T |v|^2 dt)^{1/2}` by the trapezoid rule.
    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|z| z.norm_sqr()).collect();
        trapz(&sq, self.dt()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Linear interpolation at time `t` (clamped to `[0, T]`).
    pub fn at(&self, t: f64) -> C64 {
        let n = self.steps();
        if n == 0 {
            return self.values.first().copied().unwrap_or_default();
        }
        let s = (t / self.dt()).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Resample onto `steps` uniform intervals by linear interpolation.
    /// Returns a clone when the grid already matches.
    pub fn resampled(&self, steps: usize) -> TimeSignal {
        if steps == self.steps() {
            return self.clone();
        }
        let dt = self.horizon / steps as f64;
        TimeSignal {
            horizon: self.horizon,
            values: (0..=steps).map(|n| self.at(n as f64 * dt)).collect(),
            max_imag_ratio: self.max_imag_ratio,
        }
    }

    /// Pointwise combination `a * self + b * other` on a common grid.
    pub fn combine(&self, a: f64, other: &TimeSignal, b: f64) -> TimeSignal {
        let o = other.resampled(self.steps());
        TimeSignal {
            horizon: self.horizon,
            values: self
                .values
                .iter()
                .zip(&o.values)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            max_imag_ratio: self.max_imag_ratio.max(other.max_imag_ratio),
        }
    }

    pub fn scaled(&self, a: f64) -> TimeSignal {
        TimeSignal {
            values: self.values.iter().map(|z| z * a).collect(),
            ..self.clone()
        }
    }

    /// Relative L2 distance `||self - other|| / ||other||` on the grid of `self`.
    pub fn rel_distance(&self, other: &TimeSignal) -> f64 {
        let d = self.combine(1.0, other, -1.0).l2_norm();
        let n = other.l2_norm();
        if n == 0.0 {
            d
        } else {
            d / n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_constant() {
        let s = TimeSignal::from_real(2.0, &[3.0; 11]);
        assert!((s.l2_norm() - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn resample_linear_is_exact() {
        let s = TimeSignal::from_fn(1.0, 10, |t| C64::new(2.0 * t - 1.0, t));
        let r = s.resampled(37);
        for (t, v) in r.times().iter().zip(&r.values) {
            assert!((v - C64::new(2.0 * t - 1.0, *t)).norm() < 1e-12);
        }
    }

    #[test]
    fn realify_records_ratio() {
        let s = TimeSignal::from_fn(1.0, 4, |_| C64::new(2.0, 1e-3)).realified();
        assert!((s.max_imag_ratio - 5e-4).abs() < 1e-15);
        assert_eq!(s.imag_ratio(), 0.0);
    }
}
