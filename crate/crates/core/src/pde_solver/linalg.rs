//! Sparse-ish linear algebra for the interior systems: an unpreconditioned
//! MINRES for symmetric (possibly indefinite) operators, and banded direct
//! factorizations (LU with partial pivoting, Cholesky).

/// Symmetric linear map on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||b - A x||_2`
pub(crate) fn residual_norm(a: &impl LinearOperator, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.dim()];
    a.apply(x, &mut ax);
    ax.iter()
        .zip(b)
        .map(|(p, q)| (q - p) * (q - p))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True residual `||b - A x||` at exit.
    pub residual: f64,
    pub converged: bool,
}

/// MINRES (Paige & Saunders) without preconditioning.
///
/// Stops when the recurrence residual drops below `tol * ||b||`, then
/// confirms with the true residual; a mismatch restarts from the current
/// iterate while the iteration budget lasts.
pub fn minres(
    a: &impl LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> MinresOutcome {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return MinresOutcome { x, iterations: 0, residual: 0.0, converged: true };
    }
    let target = tol * bnorm;
    let mut used = 0;
    loop {
        let mut r1 = vec![0.0; n];
        a.apply(&x, &mut r1);
        for (r, bi) in r1.iter_mut().zip(b) {
            *r = bi - *r;
        }
        let beta1 = norm(&r1);
        if beta1 <= target {
            return MinresOutcome { x, iterations: used, residual: beta1, converged: true };
        }
        if used >= max_iters {
            return MinresOutcome { x, iterations: used, residual: beta1, converged: false };
        }

        let mut y = r1.clone();
        let mut r2 = r1.clone();
        let mut v = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut w1 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let (mut oldb, mut beta) = (0.0, beta1);
        let (mut dbar, mut epsln) = (0.0_f64, 0.0_f64);
        let mut phibar = beta1;
        let (mut cs, mut sn) = (-1.0_f64, 0.0_f64);
        let mut itn = 0;
        while used < max_iters {
            itn += 1;
            used += 1;
            let s = 1.0 / beta;
            for (vi, yi) in v.iter_mut().zip(&y) {
                *vi = s * yi;
            }
            a.apply(&v, &mut y);
            if itn >= 2 {
                let c = beta / oldb;
                for (yi, ri) in y.iter_mut().zip(&r1) {
                    *yi -= c * ri;
                }
            }
            let alfa = dot(&v, &y);
            let c = alfa / beta;
            for (yi, ri) in y.iter_mut().zip(&r2) {
                *yi -= c * ri;
            }
            std::mem::swap(&mut r1, &mut r2);
            r2.copy_from_slice(&y);
            oldb = beta;
            beta = norm(&r2);

            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(f64::EPSILON);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;

            let denom = 1.0 / gamma;
            std::mem::swap(&mut w1, &mut w2);
            std::mem::swap(&mut w2, &mut w);
            for k in 0..n {
                w[k] = (v[k] - oldeps * w1[k] - delta * w2[k]) * denom;
                x[k] += phi * w[k];
            }
            if phibar <= 0.5 * target || beta == 0.0 {
                break;
            }
        }
        let res = residual_norm(a, &x, b);
        if res <= target {
            return MinresOutcome { x, iterations: used, residual: res, converged: true };
        }
        if used >= max_iters {
            return MinresOutcome { x, iterations: used, residual: res, converged: false };
        }
    }
}

/// General band matrix `A[i][j]`, nonzero only for `i - kl <= j <= i + ku`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // row i stores columns i-kl ..= i+ku+kl; the extra kl columns hold
    // fill-in produced by pivoting
    rows: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, rows: vec![0.0; n * (2 * kl + ku + 1)] }
    }

    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width() + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.rows[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.rows[self.slot(i, j)]
    }

    /// LU factorization with partial pivoting. Returns `None` on a zero
    /// (relative to the largest entry) pivot.
    pub fn lu(mut self) -> Option<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.rows.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return None;
        }
        let tiny = scale * 1e-14;
        let mut piv = vec![0; n];
        let mut mult = vec![0.0; n * kl.max(1)];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.rows[self.slot(k, k)].abs();
            for r in k + 1..=last {
                let v = self.rows[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tiny {
                return None;
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.rows.swap(a, b);
                }
            }
            let pivot = self.rows[self.slot(k, k)];
            for r in k + 1..=last {
                let srk = self.slot(r, k);
                let l = self.rows[srk] / pivot;
                self.rows[srk] = 0.0;
                mult[k * kl + (r - k - 1)] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let u = self.rows[self.slot(k, j)];
                        let s = self.slot(r, j);
                        self.rows[s] -= l * u;
                    }
                }
            }
        }
        Some(BandLu { a: self, piv, mult })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
    mult: Vec<f64>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.a.n, self.a.kl, self.a.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                x[r] -= self.mult[k * kl + (r - k - 1)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.a.rows[self.a.slot(i, j)] * x[j];
            }
            x[i] = s / self.a.rows[self.a.slot(i, i)];
        }
        x
    }
}

/// Cholesky factor of a symmetric positive definite band matrix with
/// half-bandwidth `bw`, stored by rows as `L[i][i-bw ..= i]`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// `entry(i, j)` must return `A[i][j]` for `i - bw <= j <= i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Some(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[at(i, k)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..=(i + bw).min(n - 1) {
                s -= self.l[at(k, i)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Dense(Vec<Vec<f64>>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (yi, row) in y.iter_mut().zip(&self.0) {
                *yi = dot(row, x);
            }
        }
    }

    fn banded_symmetric(n: usize, bw: usize, shift: f64, seed: u64) -> Dense {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v = rng.gen_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
            a[i][i] = shift + rng.gen_range(-1.0..1.0);
        }
        Dense(a)
    }

    #[test]
    fn minres_solves_indefinite() {
        let a = banded_symmetric(60, 4, 0.0, 3);
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 60];
        a.apply(&xs, &mut b);
        let out = minres(&a, &b, None, 1e-12, 2000);
        assert!(out.converged, "{out:?}");
        let err = xs.iter().zip(&out.x).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn minres_zero_rhs() {
        let a = banded_symmetric(10, 2, 5.0, 1);
        let out = minres(&a, &[0.0; 10], Some(&[1.0; 10]), 1e-10, 10);
        assert!(out.converged);
        assert!(out.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minres_reports_singular_inconsistent() {
        // diag(1, 0): b = (1, 1) has no solution
        let a = Dense(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        let out = minres(&a, &[1.0, 1.0], None, 1e-10, 50);
        assert!(!out.converged);
        assert!(out.residual > 0.5);
    }

    #[test]
    fn band_lu_matches_dense() {
        let n = 40;
        let bw = 5;
        let a = banded_symmetric(n, bw, 0.0, 9);
        let mut m = BandMatrix::zeros(n, bw, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                m.set(i, j, a.0[i][j]);
            }
        }
        assert_eq!(m.get(0, 30), 0.0);
        let xs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / 7.0).collect();
        let mut b = vec![0.0; n];
        a.apply(&xs, &mut b);
        let x = m.lu().unwrap().solve(&b);
        for (p, q) in xs.iter().zip(&x) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn band_lu_flags_zero_row() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 0, 2.0);
        m.set(2, 2, 1.0);
        assert!(m.lu().is_none());
    }

    #[test]
    fn band_cholesky_spd() {
        let n = 50;
        let bw = 3;
        let a = banded_symmetric(n, bw, 10.0, 4);
        let ch = BandCholesky::factor(n, bw, |i, j| a.0[i][j]).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut b = vec![0.0; n];
        a.apply(&xs, &mut b);
        let x = ch.solve(&b);
        for (p, q) in xs.iter().zip(&x) {
            assert!((p - q).abs() < 1e-10);
        }
        let neg = banded_symmetric(n, bw, -10.0, 4);
        assert!(BandCholesky::factor(n, bw, |i, j| neg.0[i][j]).is_none());
    }
}
