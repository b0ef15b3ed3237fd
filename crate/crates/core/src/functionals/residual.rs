//! The residual operator `T(c) = L_{p,q} u_lambda - f` and the functional
//! `G_T(c) = ||T||^2 + ||grad v||^2` with `-lap v = T`, `v = 0` on the boundary.
//!
//! `T` is formed from face fluxes `p_face * D_face`, where `D` are the face
//! derivatives stored with the observation. With plain differences this is
//! exactly the assembled operator applied to `u_lambda`; smoothed data may
//! supply its own derivatives. `T` is zero on the boundary.
//!
//! Since `||grad v||^2 = <T, v>` and its variation is `2 <dT, v>`, the
//! gradient only involves `W = T + v`:
//!
//! ```text
//! g_p = 2 grad u_lambda . grad W     (on faces, moved to nodes)
//! g_q = 2 lambda u_lambda W
//! g_f = -2 W
//! ```

use super::energy::check_grid;
use super::{faces_to_nodes, CoefficientTriple, FunctionalError, GradientTriple, Observation};
use crate::grid::{self, Field2D};
use crate::pde_solver::{solve_poisson_zero_bc, FaceAverage, SolverConfig};

/// `T(c)` with the observation's own face derivatives.
pub fn apply_t(obs: &Observation, c: &CoefficientTriple, avg: FaceAverage) -> Field2D {
    apply_t_with(obs, &c.p, &c.q, &c.f, avg)
}

pub fn apply_t_with(obs: &Observation, p: &Field2D, q: &Field2D, f: &Field2D, avg: FaceAverage) -> Field2D {
    let g = *p.grid();
    assert!(*obs.u.grid() == g, "grid mismatch");
    let (hx, hy) = (g.hx(), g.hy());
    let d = &obs.faces;
    let mut t = Field2D::zeros(g);
    for (i, j) in g.interior_nodes() {
        let fe = avg.value(p.at(i, j), p.at(i + 1, j)) * d.x_at(i, j);
        let fw = avg.value(p.at(i - 1, j), p.at(i, j)) * d.x_at(i - 1, j);
        let fnorth = avg.value(p.at(i, j), p.at(i, j + 1)) * d.y_at(i, j);
        let fs = avg.value(p.at(i, j - 1), p.at(i, j)) * d.y_at(i, j - 1);
        let div = (fe - fw) / hx + (fnorth - fs) / hy;
        t.set(i, j, -div + obs.lambda * q.at(i, j) * obs.u.at(i, j) - f.at(i, j));
    }
    t
}

/// `G_T` together with the fields it was built from.
#[derive(Debug, Clone)]
pub struct GtEval {
    pub value: f64,
    pub t: Field2D,
    pub v: Field2D,
}

impl GtEval {
    /// `||grad v||^2` and `<T, v>`; equal up to the Poisson solve tolerance.
    pub fn green_pair(&self) -> (f64, f64) {
        (grid::dirichlet_energy(&self.v), grid::inner(&self.t, &self.v))
    }
}

pub fn eval_g_t(obs: &Observation, c: &CoefficientTriple, cfg: &SolverConfig) -> Result<GtEval, FunctionalError> {
    check_grid(obs, c)?;
    let t = apply_t(obs, c, cfg.face_average);
    let v = solve_poisson_zero_bc(&t, cfg).map_err(FunctionalError::solver(obs.lambda))?;
    let value = grid::inner(&t, &t) + grid::dirichlet_energy(&v);
    Ok(GtEval { value, t, v })
}

pub(crate) fn gradient_from(obs: &Observation, c: &CoefficientTriple, ev: &GtEval, avg: FaceAverage) -> GradientTriple {
    let g = *c.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let w = &ev.t + &ev.v;
    let d = &obs.faces;
    // W vanishes on the boundary, so edge faces carry no weight here
    let sc = 2.0 * hx * hy;
    let mut sx = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            sx.push(sc * d.x_at(i, j) * (w.at(i + 1, j) - w.at(i, j)) / hx);
        }
    }
    let mut sy = Vec::with_capacity(nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            sy.push(sc * d.y_at(i, j) * (w.at(i, j + 1) - w.at(i, j)) / hy);
        }
    }
    let lambda = obs.lambda;
    GradientTriple {
        p: faces_to_nodes(&c.p, avg, &sx, &sy),
        q: obs.u.zip_map(&w, |u, w| 2.0 * lambda * u * w),
        f: w.scale(-2.0),
    }
}

pub fn grad_g_t(obs: &Observation, c: &CoefficientTriple, cfg: &SolverConfig) -> Result<GradientTriple, FunctionalError> {
    let ev = eval_g_t(obs, c, cfg)?;
    Ok(gradient_from(obs, c, &ev, cfg.face_average))
}
