//! Direct inversion of `-(p u')' = f` on an interval:
//! `p(x) = (p(0) u'(0) - int_0^x f) / u'(x)`.
//!
//! Exact for exact data, but `u'` is a difference quotient of the samples,
//! so data errors of size `delta` turn into errors of size `delta / h` in `p`,
//! and are amplified further wherever `|u'|` is small.

use super::FunctionalError;

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRecovery {
    pub p: Vec<f64>,
    /// Nodes where `|u'| < eps`.
    pub flagged: Vec<usize>,
}

/// Derivative of uniform samples: central differences inside, second-order
/// one-sided differences at the ends.
pub fn derivative_1d(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    d
}

/// Recovers `p` on a uniform grid `x` (ascending, at least 3 nodes) from
/// samples of `u`, `f` and the value `p0 = p(x[0])`.
///
/// `eps` defaults to the grid spacing. Nodes with `|u'| < eps` make the
/// call fail with [`FunctionalError::DivisionUnstable`], which still carries
/// the full recovery.
pub fn naive_recover_1d(
    x: &[f64],
    u: &[f64],
    f: &[f64],
    p0: f64,
    eps: Option<f64>,
) -> Result<NaiveRecovery, FunctionalError> {
    let n = x.len();
    if n < 3 || u.len() != n || f.len() != n {
        return Err(FunctionalError::Invalid(format!(
            "need at least 3 samples of equal length (x: {n}, u: {}, f: {})",
            u.len(),
            f.len()
        )));
    }
    if x.iter().chain(u).chain(f).any(|v| !v.is_finite()) || !p0.is_finite() {
        return Err(FunctionalError::Invalid("samples must be finite".into()));
    }
    let h = (x[n - 1] - x[0]) / (n - 1) as f64;
    if !(h > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(FunctionalError::Invalid("x must be uniform and ascending".into()));
    }
    let eps = eps.unwrap_or(h);
    let du = derivative_1d(u, h);
    let flux0 = p0 * du[0];
    let mut integral = 0.0;
    let mut p = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    for i in 0..n {
        if i > 0 {
            integral += 0.5 * h * (f[i - 1] + f[i]);
        }
        if du[i].abs() < eps {
            flagged.push(i);
        }
        p.push((flux0 - integral) / du[i]);
    }
    let recovery = NaiveRecovery { p, flagged };
    if recovery.flagged.is_empty() {
        Ok(recovery)
    } else {
        Err(FunctionalError::DivisionUnstable { nodes: recovery.flagged.clone(), recovery })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_flux() {
        let x = line(51);
        let r = naive_recover_1d(&x, &x, &vec![0.0; 51], 1.0, None).unwrap();
        assert!(r.p.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn linear_p_from_unit_source() {
        let x = line(51);
        let r = naive_recover_1d(&x, &x, &vec![-1.0; 51], 1.0, None).unwrap();
        for (xi, pi) in x.iter().zip(&r.p) {
            assert!((pi - (1.0 + xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn second_order_in_h() {
        // u = sin x + x, p = 1 + x^2, f = -(p u')'
        let err = |n: usize| {
            let x = line(n);
            let u: Vec<f64> = x.iter().map(|&t| t.sin() + t).collect();
            let f: Vec<f64> = x.iter().map(|&t| -(2.0 * t * (t.cos() + 1.0) - (1.0 + t * t) * t.sin())).collect();
            let r = naive_recover_1d(&x, &u, &f, 1.0, None).unwrap();
            x.iter().zip(&r.p).map(|(&t, &p)| (p - (1.0 + t * t)).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (err(41), err(81));
        assert!((a / b).log2() > 1.9, "{a} {b}");
    }

    #[test]
    fn flat_region_flagged() {
        let x = line(21);
        let u: Vec<f64> = x.iter().map(|&t| (t - 0.5) * (t - 0.5)).collect();
        match naive_recover_1d(&x, &u, &vec![-2.0; 21], 1.0, None) {
            Err(FunctionalError::DivisionUnstable { nodes, recovery }) => {
                assert_eq!(nodes, vec![10]);
                assert_eq!(recovery.p.len(), 21);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_is_amplified() {
        let n = 101;
        let x = line(n);
        let norm_u: f64 = 0.5;
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mean_abs = xi.iter().map(|v: &f64| v.abs()).sum::<f64>() / n as f64;
            let a = 1e-3 * norm_u / mean_abs;
            let u: Vec<f64> = x.iter().zip(&xi).map(|(t, e)| t + a * e).collect();
            let r = naive_recover_1d(&x, &u, &vec![0.0; n], 1.0, None).unwrap();
            let err = r.p.iter().map(|p| (p - 1.0).abs()).sum::<f64>() / n as f64;
            ratios.push(err / 1e-3);
        }
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[10] >= 10.0, "{ratios:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(naive_recover_1d(&[0.0, 1.0], &[0.0, 1.0], &[0.0, 0.0], 1.0, None).is_err());
        assert!(naive_recover_1d(&[0.0, 0.1, 1.0], &[0.0; 3], &[0.0; 3], 1.0, None).is_err());
    }
}
