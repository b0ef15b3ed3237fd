//! The energy misfit `G_lambda` and its differentials.
//!
//! With `a_c` the bilinear form of the assembled operator and `w = u_lambda
//! - u_{lambda,c}` (zero on the boundary),
//!
//! ```text
//! G_lambda(c)         = a_c(w, w)
//!                     = a_c(u_lambda, u_lambda) - a_c(u_c, u_c) - 2 <f, w>
//! G'_lambda(c)[h]     = a'_h(u_lambda, u_lambda) - a'_h(u_c, u_c) - 2 <h3, w>
//! G''_lambda(c)[h, k] = 2 <A_c^{-1} e(h), e(k)>,   e(h) = A'_h u_c - h3
//! ```
//!
//! where `a'_h` is the form of [`assemble_tangent`]. The second differential
//! is exact for arithmetic face averaging, where `a'_h` does not depend on `p`.

use super::{
    faces_to_nodes, CoefficientTriple, FunctionalError, GradientTriple, Observation, ProblemInstance,
    TangentTriple,
};
use crate::grid::{self, Field2D};
use crate::pde_solver::{apply_inverse_l, assemble, assemble_tangent, solve_with, FaceAverage, SolverConfig};

/// `u_{lambda,c}`: the solution for coefficients `c` with the boundary data
/// of the observation. `guess` warm-starts the iterative solver.
pub fn forward_solution(
    obs: &Observation,
    c: &CoefficientTriple,
    guess: Option<&Field2D>,
    cfg: &SolverConfig,
) -> Result<Field2D, FunctionalError> {
    check_grid(obs, c)?;
    let op = assemble(&c.p, &c.q, obs.lambda, cfg.face_average);
    solve_with(&op, &c.f, &obs.u, guess, cfg)
        .map(|s| s.u)
        .map_err(FunctionalError::solver(obs.lambda))
}

/// [`forward_solution`] for every observation, in order.
pub fn forward_solutions(
    inst: &ProblemInstance,
    c: &CoefficientTriple,
    cfg: &SolverConfig,
) -> Result<Vec<Field2D>, FunctionalError> {
    inst.observations.iter().map(|o| forward_solution(o, c, None, cfg)).collect()
}

pub(crate) fn check_grid(obs: &Observation, c: &CoefficientTriple) -> Result<(), FunctionalError> {
    if obs.u.grid() != c.grid() {
        return Err(FunctionalError::Invalid("coefficients and data live on different grids".into()));
    }
    Ok(())
}

pub(crate) fn value_from(obs: &Observation, c: &CoefficientTriple, uc: &Field2D, avg: FaceAverage) -> f64 {
    let op = assemble(&c.p, &c.q, obs.lambda, avg);
    let w = &obs.u - uc;
    op.energy(&w, &w)
}

pub fn eval_g_lambda(obs: &Observation, c: &CoefficientTriple, cfg: &SolverConfig) -> Result<f64, FunctionalError> {
    let uc = forward_solution(obs, c, None, cfg)?;
    Ok(value_from(obs, c, &uc, cfg.face_average))
}

/// The same value through `a_c(u_lambda, u_lambda) - a_c(u_c, u_c) - 2 <f, u_lambda - u_c>`.
pub fn eval_g_lambda_alt(
    obs: &Observation,
    c: &CoefficientTriple,
    cfg: &SolverConfig,
) -> Result<f64, FunctionalError> {
    let uc = forward_solution(obs, c, None, cfg)?;
    let op = assemble(&c.p, &c.q, obs.lambda, cfg.face_average);
    let w = &obs.u - &uc;
    Ok(op.energy(&obs.u, &obs.u) - op.energy(&uc, &uc) - 2.0 * grid::inner(&c.f, &w))
}

pub(crate) fn gradient_from(
    obs: &Observation,
    c: &CoefficientTriple,
    uc: &Field2D,
    avg: FaceAverage,
) -> GradientTriple {
    let g = *c.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let ul = &obs.u;
    let cx = hy / hx;
    let cy = hx / hy;
    let mut sx = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        let wt = g.x_face_weight(j) * cx;
        for i in 0..nx - 1 {
            let a = ul.at(i + 1, j) - ul.at(i, j);
            let b = uc.at(i + 1, j) - uc.at(i, j);
            sx.push(wt * (a * a - b * b));
        }
    }
    let mut sy = Vec::with_capacity(nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            let a = ul.at(i, j + 1) - ul.at(i, j);
            let b = uc.at(i, j + 1) - uc.at(i, j);
            sy.push(g.y_face_weight(i) * cy * (a * a - b * b));
        }
    }
    let lambda = obs.lambda;
    GradientTriple {
        p: faces_to_nodes(&c.p, avg, &sx, &sy),
        q: ul.zip_map(uc, |a, b| lambda * (a * a - b * b)),
        f: ul.zip_map(uc, |a, b| -2.0 * (a - b)),
    }
}

/// L2 gradients `(g_p, g_q, g_f)`, the exact derivatives of the discrete
/// functional. `g_p` is the discrete `|grad u_lambda|^2 - |grad u_c|^2`
/// distributed from faces to nodes.
pub fn grad_g_lambda(
    obs: &Observation,
    c: &CoefficientTriple,
    cfg: &SolverConfig,
) -> Result<GradientTriple, FunctionalError> {
    let uc = forward_solution(obs, c, None, cfg)?;
    Ok(gradient_from(obs, c, &uc, cfg.face_average))
}

/// `e(h) = -div(h1 grad u_c) + lambda h2 u_c - h3` at interior nodes, zero
/// on the boundary.
pub fn linearized_residual(
    c: &CoefficientTriple,
    uc: &Field2D,
    h: &TangentTriple,
    lambda: f64,
    avg: FaceAverage,
) -> Field2D {
    let op = assemble_tangent(&c.p, &h.h1, &h.h2, lambda, avg);
    grid::zero_boundary(&(&op.apply(uc) - &h.h3))
}

pub fn second_diff_g_lambda(
    obs: &Observation,
    c: &CoefficientTriple,
    h: &TangentTriple,
    k: &TangentTriple,
    cfg: &SolverConfig,
) -> Result<f64, FunctionalError> {
    let uc = forward_solution(obs, c, None, cfg)?;
    let eh = linearized_residual(c, &uc, h, obs.lambda, cfg.face_average);
    let ek = linearized_residual(c, &uc, k, obs.lambda, cfg.face_average);
    let op = assemble(&c.p, &c.q, obs.lambda, cfg.face_average);
    let z = apply_inverse_l(&op, &eh, cfg).map_err(FunctionalError::solver(obs.lambda))?;
    Ok(2.0 * grid::inner(&z, &ek))
}

/// Both sides of
/// `G(c1) - G(c2) = [a_1 - a_2](u_lambda, u_lambda) - [a_1 - a_2](u_1, u_2)
///                  - 2 <f1 - f2, u_lambda - (u_1 + u_2) / 2>`.
pub fn difference_identity(
    obs: &Observation,
    c1: &CoefficientTriple,
    c2: &CoefficientTriple,
    cfg: &SolverConfig,
) -> Result<(f64, f64), FunctionalError> {
    let avg = cfg.face_average;
    let u1 = forward_solution(obs, c1, None, cfg)?;
    let u2 = forward_solution(obs, c2, None, cfg)?;
    let lhs = value_from(obs, c1, &u1, avg) - value_from(obs, c2, &u2, avg);
    let a1 = assemble(&c1.p, &c1.q, obs.lambda, avg);
    let a2 = assemble(&c2.p, &c2.q, obs.lambda, avg);
    let ul = &obs.u;
    let mid = (&u1 + &u2).scale(0.5);
    let rhs = a1.energy(ul, ul) - a2.energy(ul, ul) - (a1.energy(&u1, &u2) - a2.energy(&u1, &u2))
        - 2.0 * grid::inner(&(&c1.f - &c2.f), &(ul - &mid));
    Ok((lhs, rhs))
}
