//! Least-squares fits used by the scaling diagnostics.

use serde::{Deserialize, Serialize};

/// `y = slope * x + intercept` with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r2,
    }
}

/// `y = d - c * x^p` fitted by scanning `p` and solving the linear problem
/// in `(d, c)` for each candidate (variable projection).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub offset: f64,
    pub r2: f64,
}

pub fn stretched_fit(x: &[f64], y: &[f64], p_range: (f64, f64)) -> StretchedFit {
    let eval = |p: f64| {
        let xp: Vec<f64> = x.iter().map(|v| v.powf(p)).collect();
        let f = linear_fit(&xp, y);
        StretchedFit {
            exponent: p,
            coefficient: -f.slope,
            offset: f.intercept,
            r2: f.r2,
        }
    };
    let (mut lo, mut hi) = p_range;
    let mut best = eval(lo);
    for _ in 0..4 {
        let steps = 200;
        let mut best_p = lo;
        for i in 0..=steps {
            let p = lo + (hi - lo) * i as f64 / steps as f64;
            let cand = eval(p);
            if cand.r2 > best.r2 {
                best = cand;
                best_p = p;
            }
        }
        let w = (hi - lo) / steps as f64;
        lo = (best_p - 2.0 * w).max(p_range.0);
        hi = (best_p + 2.0 * w).min(p_range.1);
    }
    best
}

/// Local maxima of `|values|` over consecutive blocks of logarithmically
/// spaced abscissae: a cheap upper envelope for oscillating decays.
pub fn log_envelope(x: &[f64], values: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let (x0, x1) = (x[0].max(1e-300), x[x.len() - 1]);
    let edges: Vec<f64> = (0..=bins)
        .map(|i| x0 * (x1 / x0).powf(i as f64 / bins as f64))
        .collect();
    let (mut ex, mut ey) = (Vec::new(), Vec::new());
    let mut start = 0;
    for w in edges.windows(2) {
        let mut best: Option<(f64, f64)> = None;
        while start < x.len() && x[start] < w[1] {
            if x[start] >= w[0] {
                let v = values[start].abs();
                if best.is_none_or(|b| v > b.1) {
                    best = Some((x[start], v));
                }
            }
            start += 1;
        }
        if let Some((a, b)) = best {
            ex.push(a);
            ey.push(b);
        }
    }
    (ex, ey)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_exact() {
        let x = [1.0, 2.0, 3.0];
        let f = linear_fit(&x, &[3.0, 5.0, 7.0]);
        assert!(
            (f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && f.r2 > 0.999999
        );
    }

    #[test]
    fn stretched_fit_recovers_exponent() {
        let x: Vec<f64> = (1..100).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 1.5 * v.powf(0.3)).collect();
        let f = stretched_fit(&x, &y, (0.05, 1.0));
        assert!((f.exponent - 0.3).abs() < 1e-3 && (f.coefficient - 1.5).abs() < 1e-2);
    }
}
