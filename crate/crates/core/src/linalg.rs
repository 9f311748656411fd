//! Small linear-algebra kernels that nalgebra does not provide: sparse
//! triplet operators and a banded LU factorization with partial pivoting.

use crate::error::{KdvError, Result};

/// Square sparse matrix stored as (row, col, value) triplets.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// y = A x
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Returns `alpha * I + beta * A` as a new triplet list.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Triplets {
        let mut out = Triplets::new(self.n);
        for i in 0..self.n {
            out.push(i, i, alpha);
        }
        for &(r, c, v) in &self.entries {
            out.push(r, c, beta * v);
        }
        out
    }
}

/// LU factorization of a banded matrix with partial pivoting.
///
/// An optional symmetric permutation lets matrices with a few far
/// off-diagonal entries (periodic-style couplings) be reordered into a
/// narrow band before factorization.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    // row r stores absolute columns [r - kl, r - kl + width)
    a: Vec<f64>,
    mult: Vec<f64>,
    piv: Vec<usize>,
    perm: Option<Vec<usize>>,
}

impl BandLu {
    /// Factor the matrix given by `m`, optionally reordered by `perm`
    /// (`perm[old] = new`).
    pub fn factor(m: &Triplets, perm: Option<Vec<usize>>) -> Result<BandLu> {
        let n = m.n;
        let map = |i: usize| perm.as_ref().map_or(i, |p| p[i]);
        let (mut kl, mut ku) = (0usize, 0usize);
        for &(r, c, _) in &m.entries {
            let (r, c) = (map(r), map(c));
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut a = vec![0.0; n * width];
        for &(r, c, v) in &m.entries {
            let (r, c) = (map(r), map(c));
            a[r * width + (c + kl - r)] += v;
        }
        let mut lu = BandLu {
            n,
            kl,
            width,
            a,
            mult: vec![0.0; n * kl.max(1)],
            piv: vec![0; n],
            perm,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.width + (c + self.kl - r)
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.width - self.kl; // columns i..i+reach in row i
        for i in 0..n {
            let last_row = (i + kl + 1).min(n);
            let mut p = i;
            let mut best = self.a[self.idx(i, i)].abs();
            for r in i + 1..last_row {
                let v = self.a[self.idx(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(KdvError::Singular {
                    context: "banded LU",
                });
            }
            self.piv[i] = p;
            let last_col = (i + reach).min(n);
            if p != i {
                for c in i..last_col {
                    let (x, y) = (self.idx(i, c), self.idx(p, c));
                    self.a.swap(x, y);
                }
            }
            let d = self.a[self.idx(i, i)];
            for r in i + 1..last_row {
                let ri = self.idx(r, i);
                let m = self.a[ri] / d;
                self.a[ri] = 0.0;
                self.mult[i * kl + (r - i - 1)] = m;
                if m != 0.0 {
                    for c in i + 1..last_col {
                        let (rc, ic) = (self.idx(r, c), self.idx(i, c));
                        self.a[rc] -= m * self.a[ic];
                    }
                }
            }
        }
        Ok(())
    }

    /// Solve A x = b in place.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        let mut x: Vec<f64> = match &self.perm {
            Some(p) => {
                let mut y = vec![0.0; n];
                for (old, &new) in p.iter().enumerate() {
                    y[new] = b[old];
                }
                y
            }
            None => b.to_vec(),
        };
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                x.swap(i, p);
            }
            let xi = x[i];
            for r in i + 1..(i + kl + 1).min(n) {
                x[r] -= self.mult[i * kl + (r - i - 1)] * xi;
            }
        }
        let reach = self.width - self.kl;
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..(i + reach).min(n) {
                s -= self.a[self.idx(i, c)] * x[c];
            }
            x[i] = s / self.a[self.idx(i, i)];
        }
        match &self.perm {
            Some(p) => {
                for (old, &new) in p.iter().enumerate() {
                    b[old] = x[new];
                }
            }
            None => b.copy_from_slice(&x),
        }
    }
}

/// Ordering 0, n-1, 1, n-2, ... that turns a pentadiagonal matrix with
/// corner couplings between the first and last rows into a band matrix.
pub fn interleave_perm(n: usize) -> Vec<usize> {
    let mut perm = vec![0; n];
    let (mut lo, mut hi) = (0usize, n);
    let mut pos = 0;
    while lo < hi {
        perm[lo] = pos;
        pos += 1;
        lo += 1;
        if lo < hi {
            hi -= 1;
            perm[hi] = pos;
            pos += 1;
        }
    }
    perm
}

/// Finite-difference weights for the `deriv`-th derivative at 0 from
/// samples at integer `offsets` (units of h), by solving the Vandermonde
/// system. Returned weights must be divided by h^deriv.
pub fn fd_weights(offsets: &[f64], deriv: usize) -> Vec<f64> {
    let m = offsets.len();
    let mut v = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (j, &o) in offsets.iter().enumerate() {
        for i in 0..m {
            v[(i, j)] = o.powi(i as i32);
        }
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    rhs[deriv] = (1..=deriv).product::<usize>() as f64;
    v.lu()
        .solve(&rhs)
        .expect("distinct offsets")
        .iter()
        .copied()
        .collect()
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapz(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_band(n: usize, corners: bool) -> Triplets {
        let mut t = Triplets::new(n);
        let mut s = 12345u64;
        let mut rnd = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for d in -2i64..=2 {
                let j = i as i64 + d;
                if j >= 0 && (j as usize) < n {
                    t.push(i, j as usize, rnd() * 100.0);
                }
            }
        }
        if corners {
            t.push(0, n - 1, 3.0);
            t.push(n - 1, 0, -2.0);
            t.push(1, n - 1, 1.5);
        }
        t
    }

    fn check(t: &Triplets, perm: Option<Vec<usize>>) {
        let lu = BandLu::factor(t, perm).unwrap();
        let x: Vec<f64> = (0..t.n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; t.n];
        t.apply(&x, &mut b);
        lu.solve(&mut b);
        let err = x
            .iter()
            .zip(&b)
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn band_lu_solves_pentadiagonal() {
        check(&random_band(50, false), None);
    }

    #[test]
    fn band_lu_solves_cyclic_with_interleave() {
        let t = random_band(41, true);
        check(&t, Some(interleave_perm(41)));
    }

    #[test]
    fn interleave_is_a_permutation() {
        for n in 1..12 {
            let mut p = interleave_perm(n);
            p.sort();
            assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fd_weights_reproduce_central_third_derivative() {
        let w = fd_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 3);
        let expect = [-0.5, 1.0, 0.0, -1.0, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
