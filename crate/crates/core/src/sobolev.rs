//! Sobolev (Neuberger) gradients: `g = (I - lap)^{-1} r` with `g = 0` on the
//! boundary, the representative of an L2 gradient `r` in the `W^{1,2}` inner
//! product `inner(g, h) + energy_inner(g, h)`.

use crate::grid::{self, Field2D};
use crate::pde_solver::{solve_helmholtz_zero_bc, SolverConfig, SolverError};

/// Smoothed, boundary-vanishing version of the L2 gradient `grad_l2`.
pub fn neuberger(grad_l2: &Field2D, cfg: &SolverConfig) -> Result<Field2D, SolverError> {
    solve_helmholtz_zero_bc(grad_l2, cfg)
}

/// `|neuberger(r)|_{H1} / |r|_{H1}` (discrete seminorms); 0 for `r = 0`.
pub fn smoothness_gain(grad_l2: &Field2D, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let g = neuberger(grad_l2, cfg)?;
    let num = grid::dirichlet_energy(&g).sqrt();
    let den = grid::dirichlet_energy(grad_l2).sqrt();
    Ok(if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sq(n: usize) -> Grid2D {
        Grid2D::unit_square(n).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let z = Field2D::zeros(sq(9));
        let cfg = SolverConfig::default();
        assert_eq!(neuberger(&z, &cfg).unwrap(), z);
        assert_eq!(smoothness_gain(&z, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn manufactured() {
        let g = sq(49);
        let s = Field2D::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
        let out = neuberger(&s.scale(2.0 * PI * PI + 1.0), &SolverConfig::default()).unwrap();
        assert!((&out - &s).max_abs() < 3e-3);
    }

    #[test]
    fn single_mode_gain_matches_discrete_eigenvalue() {
        let n = 17;
        let g = sq(n);
        let h = g.hx();
        for (m, k) in [(1usize, 1usize), (3, 2), (5, 7)] {
            let f = Field2D::from_fn(g, |x, y| {
                (m as f64 * PI * (x + 1.0) / 2.0).sin() * (k as f64 * PI * (y + 1.0) / 2.0).sin()
            });
            let eig = |j: usize| 4.0 / (h * h) * (j as f64 * PI * h / 4.0).sin().powi(2);
            let want = 1.0 / (1.0 + eig(m) + eig(k));
            let got = smoothness_gain(&f, &SolverConfig::default()).unwrap();
            assert!((got / want - 1.0).abs() < 0.05, "mode ({m},{k}): {got} vs {want}");
        }
    }

    #[test]
    fn checkerboard_is_damped() {
        let g = sq(17);
        let mut f = Field2D::zeros(g);
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                f.set(i, j, if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
            }
        }
        assert!(smoothness_gain(&f, &SolverConfig::default()).unwrap() < 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn boundary_zero_pairing_and_descent(
            r in prop::collection::vec(-1.0f64..1.0, 81),
            h in prop::collection::vec(-1.0f64..1.0, 81),
        ) {
            let g = sq(9);
            let cfg = SolverConfig { tol: 1e-12, ..Default::default() };
            let r = Field2D::from_values(g, r).unwrap();
            let h = grid::zero_boundary(&Field2D::from_values(g, h).unwrap());
            let n = neuberger(&r, &cfg).unwrap();
            prop_assert!(grid::boundary_restrict(&n).values().iter().all(|&v| v == 0.0));
            let lhs = grid::inner(&n, &h) + grid::energy_inner(&n, &h);
            let rhs = grid::inner(&r, &h);
            prop_assert!((lhs - rhs).abs() < 1e-10);
            if grid::zero_boundary(&r).max_abs() > 0.0 {
                prop_assert!(grid::inner(&r, &n) > 0.0);
            }
            let r2 = r.scale(-2.5);
            let n2 = neuberger(&r2, &cfg).unwrap();
            prop_assert!((&n2 - &n.scale(-2.5)).max_abs() < 1e-12);
        }
    }
}
