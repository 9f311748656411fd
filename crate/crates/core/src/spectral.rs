//! Spectrum of the modified KdV operator `A_m w = -w''' - w'` on (0, L)
//! with `w(0) = w(L) = 0`, `w'(0) = w'(L)`, plus critical-length tests and
//! a diagnostic eigensolve of the unmodified operator.
//!
//! Eigenfunctions are exponential sums `phi(x) = sum_j c_j exp(r_j x)`
//! where the `r_j` solve `r^3 + r + i lambda = 0`. Internally each term is
//! anchored at `x_j = L` when `Re r_j > 0` (and at 0 otherwise) so that no
//! evaluation overflows, whatever the size of `lambda`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use roots::{find_root_brent, Convergency};
use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::linalg::{fd_weights, Triplets};
use crate::C64;

/// Default tolerance used by [`solve_modes`] when rejecting critical lengths.
pub const DEFAULT_CRITICAL_TOL: f64 = 1e-6;
/// Default threshold below which a unit-normalized boundary slope is flagged.
pub const DEFAULT_SLOPE_THRESHOLD: f64 = 1e-6;

const I: C64 = Complex { re: 0.0, im: 1.0 };

// ---------------------------------------------------------------------------
// Critical lengths

/// Outcome of [`is_critical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalCheck {
    pub critical: bool,
    pub nearest: f64,
    pub distance: f64,
}

/// Integers `k^2 + k l + l^2` (k, l >= 1) not exceeding `n_max`.
fn critical_integers(n_max: u64) -> BTreeSet<u64> {
    let mut set = BTreeSet::new();
    let mut k = 1u64;
    while k * k + k < n_max {
        let mut l = 1u64;
        while k * k + k * l + l * l <= n_max {
            set.insert(k * k + k * l + l * l);
            l += 1;
        }
        k += 1;
    }
    set
}

fn critical_value(n: u64) -> f64 {
    2.0 * PI * (n as f64 / 3.0).sqrt()
}

/// All distinct critical lengths `2 pi sqrt((k^2 + k l + l^2)/3) <= l_max`,
/// sorted ascending. Deduplication is done on the integer under the root.
pub fn critical_lengths(l_max: f64) -> Vec<f64> {
    if !(l_max > 0.0) {
        return Vec::new();
    }
    let n_max = (3.0 * (l_max / (2.0 * PI)).powi(2)).floor() as u64 + 1;
    critical_integers(n_max)
        .into_iter()
        .map(critical_value)
        .filter(|&v| v <= l_max)
        .collect()
}

/// Distance from `length` to the critical set.
pub fn is_critical(length: f64, tol: f64) -> CriticalCheck {
    let upper = length + 2.0 * PI + 1.0;
    let n_max = (3.0 * (upper / (2.0 * PI)).powi(2)).ceil() as u64 + 1;
    let (mut nearest, mut distance) = (f64::NAN, f64::INFINITY);
    for n in critical_integers(n_max) {
        let v = critical_value(n);
        let d = (v - length).abs();
        if d < distance {
            distance = d;
            nearest = v;
        }
    }
    CriticalCheck {
        critical: distance <= tol,
        nearest,
        distance,
    }
}

// ---------------------------------------------------------------------------
// Characteristic roots and determinant

/// Roots of `r^3 + r + i lambda = 0`, ordered by descending real part and
/// then by descending imaginary part.
///
/// With `r = i s` the cubic becomes the real cubic `s^3 - s - lambda = 0`,
/// which is solved in closed form and polished by Newton steps.
pub fn char_roots(lambda: f64) -> Result<[C64; 3]> {
    let disc = 4.0 - 27.0 * lambda * lambda;
    if disc.abs() <= 1e-10 * (4.0 + 27.0 * lambda * lambda) {
        return Err(KdvError::DegenerateCubic { lambda });
    }
    let newton = |mut s: f64| {
        for _ in 0..3 {
            let f = s * s * s - s - lambda;
            let d = 3.0 * s * s - 1.0;
            if d == 0.0 {
                break;
            }
            s -= f / d;
        }
        s
    };
    let mut r = if disc < 0.0 {
        let a = lambda.abs();
        let u = (a / 2.0 + (a * a / 4.0 - 1.0 / 27.0).sqrt()).cbrt();
        let s0 = newton(lambda.signum() * (u + 1.0 / (3.0 * u)));
        let q = (3.0 * s0 * s0 - 4.0).max(0.0).sqrt() / 2.0;
        [
            C64::new(q, -s0 / 2.0),
            C64::new(0.0, s0),
            C64::new(-q, -s0 / 2.0),
        ]
    } else {
        let theta = (lambda * 3.0 * 3f64.sqrt() / 2.0).clamp(-1.0, 1.0).acos();
        let c = 2.0 / 3f64.sqrt();
        let mut s = [0.0; 3];
        for (m, v) in s.iter_mut().enumerate() {
            *v = newton(c * (theta / 3.0 - 2.0 * PI * m as f64 / 3.0).cos());
        }
        [
            C64::new(0.0, s[0]),
            C64::new(0.0, s[1]),
            C64::new(0.0, s[2]),
        ]
    };
    r.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(r)
}

fn det3(m: &[[C64; 3]; 3]) -> C64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Scaled determinant of the boundary-condition matrix of `A_m`.
///
/// Rows impose `w(0)`, `w(L)` and `w'(0) - w'(L)` on `exp(r_j x)`. A column
/// with `Re r > 0` is multiplied by the positive factor `exp(-Re r L)`, which
/// keeps the entries bounded without changing phases; each row is then
/// divided by its largest magnitude. For real `lambda` above the
/// repeated-root point `2/(3 sqrt 3)` the result is real up to rounding;
/// below it all three roots are imaginary and the result is imaginary.
pub fn char_determinant(lambda: f64, length: f64) -> Result<C64> {
    let r = char_roots(lambda)?;
    let mut m = [[C64::new(0.0, 0.0); 3]; 3];
    for (j, &rj) in r.iter().enumerate() {
        let (at0, at_l) = if rj.re > 0.0 {
            (
                C64::new((-rj.re * length).exp(), 0.0),
                C64::from_polar(1.0, rj.im * length),
            )
        } else {
            (C64::new(1.0, 0.0), (rj * length).exp())
        };
        m[0][j] = at0;
        m[1][j] = at_l;
        m[2][j] = rj * (at0 - at_l);
    }
    for row in m.iter_mut() {
        let s = row.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if s > 0.0 {
            row.iter_mut().for_each(|z| *z /= s);
        }
    }
    Ok(det3(&m))
}

struct RelConvergence {
    rtol: f64,
    max_iter: usize,
}

impl Convergency<f64> for RelConvergence {
    fn is_root_found(&mut self, y: f64) -> bool {
        y == 0.0
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= self.rtol * x1.abs().max(x2.abs()).max(1e-300)
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= self.max_iter
    }
}

/// `lambda` where two roots of the cubic coincide.
const REPEATED_ROOT: f64 = 0.384_900_179_459_750_5;

/// The nonzero component of the determinant (imaginary below the
/// repeated-root point, real above), nudging `lambda` off that point.
fn det_real(lambda: f64, length: f64) -> f64 {
    let part = |d: C64| {
        if lambda.abs() < REPEATED_ROOT {
            d.im
        } else {
            d.re
        }
    };
    match char_determinant(lambda, length) {
        Ok(d) => part(d),
        Err(_) => char_determinant(lambda * (1.0 + 1e-7) + 1e-9, length)
            .map(part)
            .unwrap_or(0.0),
    }
}

/// Local spacing of the eigenfrequencies near `lambda` predicted by the
/// cubic growth law.
fn predicted_gap(lambda: f64, length: f64) -> f64 {
    let a = 8.0 * PI.powi(3) / length.powi(3);
    3.0 * a.cbrt() * lambda.abs().powf(2.0 / 3.0)
}

fn scan_step(lambda: f64, length: f64) -> f64 {
    let unit = 8.0 * PI.powi(3) / length.powi(3);
    (predicted_gap(lambda, length) / 40.0).max(1e-3 * unit)
}

/// Maximum |det| accepted at a converged root; larger values indicate a
/// sign flip not caused by a zero (root reordering at the repeated-root point).
const DET_ROOT_TOL: f64 = 1e-6;

fn refine(a: f64, b: f64, length: f64, k: i32) -> Result<f64> {
    let mut conv = RelConvergence {
        rtol: 1e-14,
        max_iter: 200,
    };
    find_root_brent(a, b, |x| det_real(x, length), &mut conv)
        .map_err(|_| KdvError::RootNotConverged { k })
}

/// The first `count` positive eigenfrequencies of `A_m`, found by scanning
/// the scaled determinant for sign changes and refining each bracket by
/// Brent's method.
pub fn solve_frequencies(length: f64, count: usize) -> Result<Vec<f64>> {
    if !(length > 0.0) || count == 0 {
        return Err(KdvError::InvalidInput(format!(
            "need L > 0 and count >= 1 (L = {length}, count = {count})"
        )));
    }
    let unit = 8.0 * PI.powi(3) / length.powi(3);
    let limit = 64.0 * unit * (count as f64 + 2.0).powi(3);
    let mut out: Vec<f64> = Vec::with_capacity(count);
    let mut lo = 1e-9 * unit;
    let mut f_lo = det_real(lo, length);
    while out.len() < count {
        if lo > limit {
            return Err(KdvError::RootNotConverged {
                k: out.len() as i32 + 1,
            });
        }
        let hi = lo + scan_step(lo, length);
        let f_hi = det_real(hi, length);
        if f_lo == 0.0 || f_lo * f_hi < 0.0 {
            let k = out.len() as i32 + 1;
            let root = if f_lo == 0.0 {
                lo
            } else {
                refine(lo, hi, length, k)?
            };
            let residual = char_determinant(root, length)
                .map(|d| d.norm())
                .unwrap_or(f64::INFINITY);
            if residual <= DET_ROOT_TOL {
                if let Some(&prev) = out.last() {
                    if (root - prev).abs() <= 1e-12 * root {
                        return Err(KdvError::DuplicateRoot {
                            k1: k - 1,
                            k2: k,
                            lambda: root,
                        });
                    }
                }
                out.push(root);
            }
        }
        lo = hi;
        f_lo = f_hi;
    }
    Ok(out)
}

/// Refine an eigenfrequency starting from an arbitrary seed: expand a
/// bracket symmetrically around the seed until the determinant changes sign
/// at an actual zero, then apply Brent's method.
pub fn refine_from_seed(seed: f64, length: f64) -> Result<f64> {
    let step = scan_step(seed, length);
    let f0 = det_real(seed, length);
    for i in 0..4000 {
        for dir in [1.0, -1.0] {
            let a = seed + dir * i as f64 * step;
            let b = a + dir * step;
            if b <= 0.0 {
                continue;
            }
            let (fa, fb) = (
                if i == 0 { f0 } else { det_real(a, length) },
                det_real(b, length),
            );
            if fa * fb <= 0.0 {
                let root = refine(a.min(b), a.max(b), length, 0)?;
                if char_determinant(root, length)
                    .map(|d| d.norm())
                    .unwrap_or(f64::INFINITY)
                    <= DET_ROOT_TOL
                {
                    return Ok(root);
                }
            }
        }
    }
    Err(KdvError::RootNotConverged { k: 0 })
}

// ---------------------------------------------------------------------------
// Eigenmodes

/// One eigenpair of `A_m`: `A_m phi = i lambda phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenMode {
    pub k: i32,
    pub lambda: f64,
    pub roots: [C64; 3],
    /// Coefficients of `exp(r_j (x - anchor_j))`.
    pub scaled_coeffs: [C64; 3],
    /// Anchor points `x_j` (0 or L).
    pub anchors: [f64; 3],
    pub slope0: C64,
    pub slope_l: C64,
    pub l2_norm: f64,
    pub length: f64,
}

impl EigenMode {
    fn from_parts(k: i32, lambda: f64, roots: [C64; 3], coeffs: [C64; 3], length: f64) -> Self {
        let anchors = roots.map(|r| if r.re > 0.0 { length } else { 0.0 });
        let mut m = EigenMode {
            k,
            lambda,
            roots,
            scaled_coeffs: coeffs,
            anchors,
            slope0: C64::new(0.0, 0.0),
            slope_l: C64::new(0.0, 0.0),
            l2_norm: 0.0,
            length,
        };
        m.slope0 = m.deriv(0.0);
        m.slope_l = m.deriv(length);
        m.l2_norm = m.inner(&m).re.sqrt();
        m
    }

    /// Construct the normalized mode for a converged positive frequency.
    pub fn new(k: i32, lambda: f64, length: f64) -> Result<Self> {
        let roots = char_roots(lambda)?;
        let anchors = roots.map(|r| if r.re > 0.0 { length } else { 0.0 });
        let mut rows = [[C64::new(0.0, 0.0); 3]; 3];
        for j in 0..3 {
            let (r, x) = (roots[j], anchors[j]);
            let a0 = (-r * x).exp();
            let al = (r * (length - x)).exp();
            rows[0][j] = a0;
            rows[1][j] = al;
            rows[2][j] = r * (a0 - al);
        }
        for row in rows.iter_mut() {
            let s = row.iter().map(|z| z.norm()).fold(0.0, f64::max);
            row.iter_mut().for_each(|z| *z /= s);
        }
        // Null vector: bilinear cross product of the best-conditioned row pair.
        let cross = |a: &[C64; 3], b: &[C64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let norm3 = |v: &[C64; 3]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut coeffs = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(a, b)| cross(&rows[a], &rows[b]))
            .max_by(|u, v| norm3(u).total_cmp(&norm3(v)))
            .expect("three candidate pairs");
        // Phase: make the true coefficient of exp(r_1 x) real positive.
        let c1_phase = coeffs[0].arg() - roots[0].im * anchors[0];
        let rot = C64::from_polar(1.0, -c1_phase);
        coeffs.iter_mut().for_each(|c| *c *= rot);
        let mut mode = EigenMode::from_parts(k, lambda, roots, coeffs, length);
        let n = mode.l2_norm;
        mode.scaled_coeffs.iter_mut().for_each(|c| *c /= n);
        Ok(EigenMode::from_parts(
            k,
            lambda,
            roots,
            mode.scaled_coeffs,
            length,
        ))
    }

    /// The mode with index `-k`: frequency `-lambda`, conjugate data.
    pub fn conjugate(&self) -> Self {
        EigenMode {
            k: -self.k,
            lambda: -self.lambda,
            roots: self.roots.map(|r| r.conj()),
            scaled_coeffs: self.scaled_coeffs.map(|c| c.conj()),
            anchors: self.anchors,
            slope0: self.slope0.conj(),
            slope_l: self.slope_l.conj(),
            l2_norm: self.l2_norm,
            length: self.length,
        }
    }

    /// Coefficients `c_j` of the plain representation `sum_j c_j exp(r_j x)`.
    /// These underflow for very high modes; evaluation never uses them.
    pub fn coeffs(&self) -> [C64; 3] {
        let mut c = self.scaled_coeffs;
        for ((c, r), a) in c.iter_mut().zip(&self.roots).zip(&self.anchors) {
            *c *= (-r * a).exp();
        }
        c
    }

    fn eval_with(&self, x: f64, power: i32) -> C64 {
        (0..3)
            .map(|j| {
                let r = self.roots[j];
                self.scaled_coeffs[j] * r.powi(power) * (r * (x - self.anchors[j])).exp()
            })
            .sum()
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.eval_with(x, 0)
    }

    pub fn deriv(&self, x: f64) -> C64 {
        self.eval_with(x, 1)
    }

    /// Values at the points `x`.
    pub fn sample(&self, xs: &[f64]) -> Vec<C64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// `integral_0^L phi_self conj(phi_other) dx`, in closed form.
    pub fn inner(&self, other: &EigenMode) -> C64 {
        let l = self.length;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let ri = self.roots[i];
                let rj = other.roots[j].conj();
                let s = ri + rj;
                let e0 = -ri * self.anchors[i] - rj * other.anchors[j];
                let sl = s * l;
                let integral = if sl.norm() < 1e-3 {
                    (e0).exp()
                        * l
                        * (C64::new(1.0, 0.0) + sl / 2.0 + sl * sl / 6.0 + sl * sl * sl / 24.0)
                } else {
                    ((sl + e0).exp() - e0.exp()) / s
                };
                acc += self.scaled_coeffs[i] * other.scaled_coeffs[j].conj() * integral;
            }
        }
        acc
    }

    /// Largest of `|phi(0)|`, `|phi(L)|`, `|phi'(0) - phi'(L)|`.
    pub fn boundary_residual(&self) -> f64 {
        let scale = (self.lambda.abs().cbrt()).max(1.0);
        self.eval(0.0)
            .norm()
            .max(self.eval(self.length).norm())
            .max((self.slope0 - self.slope_l).norm() / scale)
    }

    /// Relative residual `|| -phi''' - phi' - i lambda phi || / ||phi||` on a
    /// uniform sample of `samples` points.
    pub fn equation_residual(&self, samples: usize) -> f64 {
        let il = I * self.lambda;
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..samples {
            let x = self.length * s as f64 / (samples - 1) as f64;
            let mut res = C64::new(0.0, 0.0);
            for j in 0..3 {
                let r = self.roots[j];
                res += self.scaled_coeffs[j]
                    * (-r * r * r - r - il)
                    * (r * (x - self.anchors[j])).exp();
            }
            num += res.norm_sqr();
            den += self.eval(x).norm_sqr();
        }
        (num / den).sqrt()
    }
}

/// Eigenmodes for `k = +-1..+-K`, sorted by `k`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub length: f64,
    pub count: usize,
    pub modes: Vec<EigenMode>,
    /// Set when the determinant nearly vanishes at `lambda -> 0+`; reported,
    /// never used.
    pub near_zero_root: Option<f64>,
}

impl Spectrum {
    /// Mode with index `k` (nonzero, `|k| <= K`).
    pub fn mode(&self, k: i32) -> &EigenMode {
        let kk = self.count as i32;
        assert!(k != 0 && k.abs() <= kk, "mode index {k} out of range");
        let idx = if k < 0 {
            (k + kk) as usize
        } else {
            (k + kk - 1) as usize
        };
        &self.modes[idx]
    }

    /// Positive frequencies `lambda_1..lambda_K`.
    pub fn positive_frequencies(&self) -> Vec<f64> {
        (1..=self.count as i32)
            .map(|k| self.mode(k).lambda)
            .collect()
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> + '_ {
        self.modes.iter().map(|m| m.k)
    }
}

/// Build a spectrum from already computed positive frequencies.
pub fn spectrum_from_frequencies(length: f64, freqs: &[f64]) -> Result<Spectrum> {
    let positive: Vec<EigenMode> = freqs
        .iter()
        .enumerate()
        .map(|(i, &lam)| EigenMode::new(i as i32 + 1, lam, length))
        .collect::<Result<_>>()?;
    let mut modes: Vec<EigenMode> = positive.iter().rev().map(EigenMode::conjugate).collect();
    modes.extend(positive);
    let near_zero_root = char_determinant(1e-9, length)
        .ok()
        .filter(|d| d.norm() < 1e-8)
        .map(|_| 0.0);
    Ok(Spectrum {
        length,
        count: freqs.len(),
        modes,
        near_zero_root,
    })
}

/// Eigenmodes of `A_m` for `k = +-1..+-K`.
pub fn solve_modes(length: f64, count: usize) -> Result<Spectrum> {
    let check = is_critical(length, DEFAULT_CRITICAL_TOL);
    if check.critical {
        return Err(KdvError::CriticalLength {
            length,
            nearest: check.nearest,
            distance: check.distance,
        });
    }
    let freqs = solve_frequencies(length, count)?;
    spectrum_from_frequencies(length, &freqs)
}

// ---------------------------------------------------------------------------
// Asymptotics

/// Large-k approximation of a mode.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticMode {
    pub k: usize,
    pub length: f64,
    pub lambda_hat: f64,
    pub a_k: f64,
    pub alpha_k: f64,
}

impl AsymptoticMode {
    /// Closed-form eigenfunction approximation.
    pub fn phi_hat(&self, x: f64) -> C64 {
        let (a, l) = (self.a_k, self.length);
        let b = C64::new(3.0 * a * a - 1.0, 0.0).sqrt();
        // cosh(bx) - cosh(bL) sinh(bx)/sinh(bL) = sinh(b(L-x))/sinh(bL)
        let ratio = |y: f64| -> C64 {
            // sinh(b y)/sinh(b L), written to avoid overflow for large bL
            let num = C64::new(1.0, 0.0) - (-b * 2.0 * y).exp();
            let den = C64::new(1.0, 0.0) - (-b * 2.0 * l).exp();
            (b * (y - l)).exp() * num / den
        };
        let bracket = ratio(l - x) + (I * 3.0 * a * l).exp() * ratio(x);
        (C64::from_polar(1.0, -a * x) * bracket - C64::from_polar(1.0, 2.0 * a * x)) * self.alpha_k
    }
}

/// Leading-order frequency, wavenumber and amplitude for mode `k`.
pub fn asymptotic_mode(k: usize, length: f64) -> AsymptoticMode {
    let kf = k as f64;
    AsymptoticMode {
        k,
        length,
        lambda_hat: 8.0 * PI.powi(3) * kf.powi(3) / length.powi(3),
        a_k: 5.0 * PI / (6.0 * length) + kf * PI / length,
        alpha_k: 1.0 / length.sqrt(),
    }
}

/// Frequency seed derived from the wavenumber law: `lambda = 8a^3 - 2a`
/// evaluated at the wavenumber of index `k - 1`, which is the one whose
/// frequency lies nearest to the `k`-th eigenvalue.
pub fn wavenumber_seed(k: usize, length: f64) -> f64 {
    let a = if k >= 1 {
        asymptotic_mode(k - 1, length).a_k
    } else {
        0.0
    };
    8.0 * a.powi(3) - 2.0 * a
}

// ---------------------------------------------------------------------------
// Slope and gap reports

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub k: i32,
    pub slope: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeReport {
    pub min_slope: f64,
    pub min_ratio: f64,
    pub entries: Vec<SlopeEntry>,
    pub flagged: Vec<i32>,
}

/// Per-mode `|phi'_k(L)|` and the ratio `|phi'_k(L)|/|k|`; modes with slope
/// below `threshold` are flagged.
pub fn boundary_slope_check(spec: &Spectrum, threshold: f64) -> SlopeReport {
    let entries: Vec<SlopeEntry> = spec
        .modes
        .iter()
        .map(|m| SlopeEntry {
            k: m.k,
            slope: m.slope_l.norm(),
            ratio: m.slope_l.norm() / m.k.unsigned_abs() as f64,
        })
        .collect();
    let flagged = entries
        .iter()
        .filter(|e| e.slope < threshold)
        .map(|e| e.k)
        .collect();
    SlopeReport {
        min_slope: entries
            .iter()
            .map(|e| e.slope)
            .fold(f64::INFINITY, f64::min),
        min_ratio: entries
            .iter()
            .map(|e| e.ratio)
            .fold(f64::INFINITY, f64::min),
        entries,
        flagged,
    }
}

/// Growth and separation data of a frequency sequence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapReport {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    #[serde(rename = "Gamma1")]
    pub gamma1: f64,
    #[serde(rename = "Gamma2")]
    pub gamma2: f64,
}

/// Gap report from the positive branch `pos[k-1] = lambda_k` and the negative
/// branch `neg[k-1] = lambda_{-k}`.
pub fn gap_report_from(pos: &[f64], neg: &[f64]) -> Result<GapReport> {
    if pos.len() + neg.len() < 2 {
        return Err(KdvError::InvalidInput(
            "gap report needs at least two frequencies".into(),
        ));
    }
    let fit = |branch: &[f64]| {
        let (num, den) = branch
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(n, d), (i, &l)| {
                let k3 = ((i + 1) as f64).powi(3);
                (n + l.abs() * k3, d + k3 * k3)
            });
        num / den
    };
    let (a, b) = (fit(pos), fit(neg));
    let mut all: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    let gamma = all
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(gamma > 0.0) {
        return Err(KdvError::NonPositiveGap { gamma });
    }
    let mut gamma1: f64 = 0.0;
    let mut gamma2: f64 = 0.0;
    for (branch, coef) in [(pos, a), (neg, b)] {
        for (i, &l) in branch.iter().enumerate() {
            let k = (i + 1) as f64;
            gamma1 = gamma1.max((l.abs() - coef * k.powi(3)).abs() / (k * k));
            gamma2 = gamma2.max(k.powi(3) / l.abs());
        }
    }
    Ok(GapReport {
        alpha: 3.0,
        a,
        b,
        gamma,
        gamma1,
        gamma2,
    })
}

pub fn gap_report(spec: &Spectrum) -> Result<GapReport> {
    let pos = spec.positive_frequencies();
    let neg: Vec<f64> = (1..=spec.count as i32)
        .map(|k| spec.mode(-k).lambda)
        .collect();
    gap_report_from(&pos, &neg)
}

// ---------------------------------------------------------------------------
// Finite-difference operators (oracles and diagnostics)

/// Skew-symmetric finite-difference matrix of `A_m` on `n` interior points
/// (`h = L/(n+1)`), with the periodic-slope closure of the pde module.
pub fn fd_matrix_am(length: f64, n: usize) -> DMatrix<f64> {
    let op = crate::pde::fd_operator(length, n, crate::pde::Boundary::Jump);
    -op.matrix.to_dense()
}

/// Eigenfrequencies of the FD matrix of `A_m`, positive branch, ascending.
///
/// `S` is real skew-symmetric, so `-S^{-2} = (S^T S)^{-1}` is symmetric
/// positive definite with eigenvalues `1/lambda^2`, each twice. Block
/// subspace iteration on it (two banded solves per column) with a
/// Rayleigh-Ritz step per sweep finds the lowest pairs without forming
/// `S^T S`, whose spectrum spans `h^{-6}` and swamps the low modes.
pub fn fd_frequencies(length: f64, n: usize, count: usize) -> Result<Vec<f64>> {
    if n % 2 == 1 || n < 8 {
        return Err(KdvError::InvalidInput(format!(
            "fd_frequencies needs even n >= 8, got {n}"
        )));
    }
    let op = crate::pde::fd_operator(length, n, crate::pde::Boundary::Jump);
    let lu = crate::linalg::BandLu::factor(&op.matrix, Some(crate::linalg::interleave_perm(n)))?;
    let p = (2 * count + 8).min(n);
    let apply = |q: &DMatrix<f64>| -> DMatrix<f64> {
        let mut z = q.clone();
        for mut col in z.column_iter_mut() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            lu.solve(&mut v);
            lu.solve(&mut v);
            for (c, x) in col.iter_mut().zip(&v) {
                *c = -x;
            }
        }
        z
    };
    // deterministic start: smooth sines plus a cosine set, so both members
    // of each degenerate pair are represented
    let xs: Vec<f64> = (1..=n).map(|j| j as f64 / (n + 1) as f64).collect();
    let mut q = DMatrix::from_fn(n, p, |i, j| {
        let m = (j / 2 + 1) as f64 * std::f64::consts::PI;
        if j % 2 == 0 {
            (m * xs[i]).sin()
        } else {
            (m * xs[i]).cos() * xs[i] * (1.0 - xs[i])
        }
    });
    let mut previous = vec![f64::INFINITY; count];
    for _ in 0..200 {
        q = q.qr().q();
        let z = apply(&q);
        let small = q.transpose() * &z;
        let small = (&small + small.transpose()) * 0.5;
        let eig = small.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let freqs: Vec<f64> = order
            .chunks(2)
            .take(count)
            .map(|c| {
                c.iter()
                    .map(|&i| 1.0 / eig.eigenvalues[i].max(f64::MIN_POSITIVE).sqrt())
                    .sum::<f64>()
                    / c.len() as f64
            })
            .collect();
        let vecs = &eig.eigenvectors;
        let sorted = DMatrix::from_fn(p, p, |i, j| vecs[(i, order[j])]);
        q = z * sorted;
        let change = freqs
            .iter()
            .zip(&previous)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0, f64::max);
        previous = freqs;
        if change < 1e-13 {
            break;
        }
    }
    Ok(previous)
}

/// FD matrix of `A phi = -phi''' - phi'` with `phi(0) = phi(L) = phi'(0) = 0`.
pub fn fd_matrix_original(length: f64, n: usize) -> DMatrix<f64> {
    let h = length / (n + 1) as f64;
    let mut t = Triplets::new(n);
    let d3 = 1.0 / (2.0 * h.powi(3));
    let d1 = 1.0 / (2.0 * h);
    // one-sided stencil for the last row (needs no ghost beyond x = L)
    let w_right = fd_weights(&[-3.0, -2.0, -1.0, 0.0, 1.0], 3);
    for j in 0..n {
        let jj = j as i64 + 1; // grid index, interior 1..=n
        if jj == n as i64 {
            for (o, w) in (-3i64..=1).zip(&w_right) {
                let idx = jj + o;
                if (1..=n as i64).contains(&idx) {
                    t.push(j, (idx - 1) as usize, -w / h.powi(3));
                }
            }
        } else {
            for (o, w) in [(-2i64, -d3), (-1, 2.0 * d3), (1, -2.0 * d3), (2, d3)] {
                let mut idx = jj + o;
                // even reflection through x = 0 realizes phi'(0) = 0
                if idx < 0 {
                    idx = -idx;
                }
                if (1..=n as i64).contains(&idx) {
                    t.push(j, (idx - 1) as usize, -w);
                }
            }
        }
        for (o, w) in [(-1i64, -d1), (1, d1)] {
            let idx = jj + o;
            if (1..=n as i64).contains(&idx) {
                t.push(j, (idx - 1) as usize, -w);
            }
        }
    }
    t.to_dense()
}

/// Diagnostic eigen-data of the unmodified operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OriginalReport {
    pub grid_points: usize,
    /// Eigenvalues of the FD matrix of `A`, nearest the origin first.
    pub eigenvalues: Vec<C64>,
    /// Eigenvalues of the forward generator `-A` (the dissipative flow).
    pub generator_eigenvalues: Vec<C64>,
    /// 2-norm condition number of the matrix of unit eigenvectors.
    pub eigvec_condition: f64,
}

/// Eigenvalues of `A` nearest the origin and the conditioning of their
/// eigenvectors (a non-normality measure).
pub fn solve_modes_original(length: f64, count: usize, n: usize) -> Result<OriginalReport> {
    let a = fd_matrix_original(length, n);
    let mut ev: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(KdvError::Eigensolve("non-finite eigenvalue".into()));
    }
    ev.sort_by(|x, y| x.norm().total_cmp(&y.norm()).then(x.im.total_cmp(&y.im)));
    ev.truncate(count);
    let ac = a.map(|v| C64::new(v, 0.0));
    let vecs = eigenvectors_by_inverse_iteration(&ac, &ev)?;
    let svd = vecs.svd(false, false);
    let sv = svd.singular_values;
    let cond = sv.max() / sv.min();
    Ok(OriginalReport {
        grid_points: n,
        generator_eigenvalues: ev.iter().map(|z| -z).collect(),
        eigenvalues: ev,
        eigvec_condition: cond,
    })
}

/// Unit eigenvectors (as columns) for the given eigenvalues.
pub fn eigenvectors_by_inverse_iteration(
    a: &DMatrix<C64>,
    eigenvalues: &[C64],
) -> Result<DMatrix<C64>> {
    let n = a.nrows();
    let mut out = DMatrix::<C64>::zeros(n, eigenvalues.len());
    for (col, &mu) in eigenvalues.iter().enumerate() {
        let shift = mu + C64::new(1e-10, 1e-10) * mu.norm().max(1.0);
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= shift;
        }
        let lu = m.lu();
        let mut v = nalgebra::DVector::<C64>::from_fn(n, |i, _| {
            C64::new(1.0 + (i as f64 * 0.7).sin(), 0.3)
        });
        for _ in 0..3 {
            v = lu
                .solve(&v)
                .ok_or_else(|| KdvError::Eigensolve("singular shifted matrix".into()))?;
            let nv = v.norm();
            v /= C64::new(nv, 0.0);
        }
        out.set_column(col, &v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_examples() {
        assert_eq!(critical_lengths(7.0).len(), 1);
        assert!((critical_lengths(7.0)[0] - 2.0 * PI).abs() < 1e-12);
        let ten = critical_lengths(10.0);
        assert!(ten
            .iter()
            .any(|&v| (v - 2.0 * PI * (7.0f64 / 3.0).sqrt()).abs() < 1e-12));
        assert!(critical_lengths(6.0).is_empty());
        let c = is_critical(1.0, 1e-9);
        assert!(!c.critical && (c.nearest - 2.0 * PI).abs() < 1e-12);
        assert!((c.distance - (2.0 * PI - 1.0)).abs() < 1e-12);
        assert!(is_critical(2.0 * PI, 1e-9).critical);
        assert!(is_critical(2.0 * PI * (7.0f64 / 3.0).sqrt() + 1e-12, 1e-9).critical);
    }

    #[test]
    fn roots_solve_the_cubic() {
        for &lam in &[0.1, -0.2, 1.0, -7.5, 139.0, 1.0e6, -3.3e9] {
            let r = char_roots(lam).unwrap();
            for z in r {
                let f = z * z * z + z + I * lam;
                assert!(
                    f.norm() <= 1e-12 * (1.0 + lam.abs()),
                    "lam {lam} residual {}",
                    f.norm()
                );
            }
            assert!(r[0].re >= r[1].re && r[1].re >= r[2].re);
        }
    }

    #[test]
    fn degenerate_cubic_is_signalled() {
        let lam = 2.0 / 27f64.sqrt();
        assert!(matches!(
            char_roots(lam),
            Err(KdvError::DegenerateCubic { .. })
        ));
        assert!(matches!(
            char_determinant(-lam, 1.0),
            Err(KdvError::DegenerateCubic { .. })
        ));
    }

    #[test]
    fn first_frequencies_for_unit_length() {
        let f = solve_frequencies(1.0, 3).unwrap();
        assert!((f[0] - 139.0657).abs() < 1e-3, "{f:?}");
        assert!((f[1] - 1518.728).abs() < 1e-2);
        assert!((f[2] - 5625.924).abs() < 1e-2);
    }

    #[test]
    fn modes_satisfy_domain_and_orthonormality() {
        let spec = solve_modes(1.0, 4).unwrap();
        for m in &spec.modes {
            assert!(
                m.boundary_residual() < 1e-10,
                "k {} res {}",
                m.k,
                m.boundary_residual()
            );
            assert!(m.equation_residual(101) < 1e-8);
            assert!((m.l2_norm - 1.0).abs() < 1e-12);
        }
        for a in &spec.modes {
            for b in &spec.modes {
                let g = a.inner(b);
                let expect = if a.k == b.k { 1.0 } else { 0.0 };
                assert!((g - expect).norm() < 1e-8, "({}, {}) -> {g}", a.k, b.k);
            }
        }
    }

    #[test]
    fn conjugate_mode_is_exact() {
        let spec = solve_modes(1.0, 2).unwrap();
        let (p, n) = (spec.mode(2), spec.mode(-2));
        assert_eq!(n.lambda, -p.lambda);
        assert_eq!(n.slope_l, p.slope_l.conj());
        assert_eq!(n.eval(0.3), p.eval(0.3).conj());
    }

    #[test]
    fn phase_is_fixed_by_first_coefficient() {
        let spec = solve_modes(1.0, 2).unwrap();
        let c = spec.mode(1).coeffs();
        assert!(c[0].im.abs() <= 1e-12 * c[0].norm() && c[0].re > 0.0);
    }

    #[test]
    fn asymptotic_examples() {
        assert!((asymptotic_mode(1, 2.0 * PI).lambda_hat - 1.0).abs() < 1e-12);
        assert!((asymptotic_mode(2, PI).a_k - 17.0 / 6.0).abs() < 1e-12);
        let m = asymptotic_mode(5, 1.0);
        assert!(m.phi_hat(0.0).norm() < 1e-12);
    }

    #[test]
    fn seeds_converge_to_the_same_root() {
        let f = solve_frequencies(1.0, 8).unwrap();
        for k in 1..=8usize {
            let a = refine_from_seed(asymptotic_mode(k, 1.0).lambda_hat, 1.0).unwrap();
            let b = refine_from_seed(wavenumber_seed(k, 1.0), 1.0).unwrap();
            assert!(
                (a - f[k - 1]).abs() <= 1e-9 * f[k - 1],
                "k {k}: {a} vs {}",
                f[k - 1]
            );
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn gap_report_examples() {
        let c = 8.0 * PI.powi(3);
        let pos = [c, 8.0 * c, 27.0 * c];
        let neg = pos.map(|v| -v);
        let g = gap_report_from(&pos, &neg).unwrap();
        assert!(g.gamma1.abs() < 1e-9 && (g.a - c).abs() < 1e-9 && g.gamma > 0.0);
        assert!(gap_report_from(&[1.0, 1.0], &[-1.0]).is_err());
    }

    #[test]
    fn slope_flag_on_injected_zero() {
        let mut spec = solve_modes(1.0, 2).unwrap();
        let rep = boundary_slope_check(&spec, DEFAULT_SLOPE_THRESHOLD);
        assert!(rep.flagged.is_empty() && rep.min_ratio > 0.0);
        spec.modes[0].slope_l = C64::new(0.0, 0.0);
        assert_eq!(
            boundary_slope_check(&spec, DEFAULT_SLOPE_THRESHOLD).flagged,
            vec![-2]
        );
    }

    #[test]
    fn critical_length_is_rejected() {
        assert!(matches!(
            solve_modes(2.0 * PI, 2),
            Err(KdvError::CriticalLength { .. })
        ));
    }
}
