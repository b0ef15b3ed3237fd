//! Misfit functionals for recovering `c = (p, q, f)` from solutions `u_lambda`
//! and their L2 gradients.
//!
//! Two families live here:
//!
//! * the energy misfit `G_lambda(c) = a_c(u_lambda - u_{lambda,c}, u_lambda - u_{lambda,c})`,
//!   which needs a forward solve per evaluation ([`energy`]);
//! * the residual functional `G_T(c) = ||T(c)||^2 + ||grad v||^2` with
//!   `T(c) = L_{p,q} u_lambda - f` and `-lap v = T(c)`, which only needs a
//!   fixed Poisson solve ([`residual`]).
//!
//! All discrete quantities are built from one bilinear form (the weak form of
//! the five-point stencil), so the analytic identities relating them hold to
//! solver round-off rather than to discretization error.

pub mod energy;
pub mod naive;
pub mod objective;
pub mod residual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, BoundaryValues, FaceGradients, Field2D, Grid2D};
use crate::pde_solver::{FaceAverage, SolverError};

pub use energy::{
    difference_identity, eval_g_lambda, eval_g_lambda_alt, forward_solution, forward_solutions,
    grad_g_lambda, linearized_residual, second_diff_g_lambda,
};
pub use naive::{naive_recover_1d, NaiveRecovery};
pub use objective::{eval_total, evaluate, grad_total, gradient, Evaluation, Functional};
pub use residual::{apply_t, apply_t_with, eval_g_t, grad_g_t, GtEval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("solve failed for lambda = {lambda}: {source}")]
    Solver {
        lambda: f64,
        #[source]
        source: SolverError,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("|u'| below threshold at {} node(s); first at index {}", .nodes.len(), .nodes[0])]
    DivisionUnstable { nodes: Vec<usize>, recovery: NaiveRecovery },
}

impl FunctionalError {
    fn solver(lambda: f64) -> impl FnOnce(SolverError) -> FunctionalError {
        move |source| FunctionalError::Solver { lambda, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    P,
    Q,
    F,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::P, Component::Q, Component::F];

    pub fn name(self) -> &'static str {
        match self {
            Component::P => "p",
            Component::Q => "q",
            Component::F => "f",
        }
    }
}

/// The unknowns `(p, q, f)` on one grid. No sign condition is imposed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTriple {
    pub p: Field2D,
    pub q: Field2D,
    pub f: Field2D,
}

impl CoefficientTriple {
    pub fn new(p: Field2D, q: Field2D, f: Field2D) -> Result<Self, FunctionalError> {
        if !(p.same_grid(&q) && p.same_grid(&f)) {
            return Err(FunctionalError::Invalid("p, q, f must share one grid".into()));
        }
        if !(p.is_finite() && q.is_finite() && f.is_finite()) {
            return Err(FunctionalError::Invalid("coefficients must be finite".into()));
        }
        Ok(Self { p, q, f })
    }

    /// `(p, 0, 0)`.
    pub fn p_only(p: Field2D) -> Self {
        let g = *p.grid();
        Self { p, q: Field2D::zeros(g), f: Field2D::zeros(g) }
    }

    pub fn grid(&self) -> &Grid2D {
        self.p.grid()
    }

    pub fn get(&self, c: Component) -> &Field2D {
        match c {
            Component::P => &self.p,
            Component::Q => &self.q,
            Component::F => &self.f,
        }
    }

    pub fn get_mut(&mut self, c: Component) -> &mut Field2D {
        match c {
            Component::P => &mut self.p,
            Component::Q => &mut self.q,
            Component::F => &mut self.f,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite() && self.f.is_finite()
    }
}

/// L2 gradients `(g_p, g_q, g_f)` of a functional, one field per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    pub p: Field2D,
    pub q: Field2D,
    pub f: Field2D,
}

impl GradientTriple {
    pub fn zeros(g: Grid2D) -> Self {
        Self { p: Field2D::zeros(g), q: Field2D::zeros(g), f: Field2D::zeros(g) }
    }

    pub fn get(&self, c: Component) -> &Field2D {
        match c {
            Component::P => &self.p,
            Component::Q => &self.q,
            Component::F => &self.f,
        }
    }

    pub fn add_assign(&mut self, other: &GradientTriple) {
        self.p.axpy(1.0, &other.p);
        self.q.axpy(1.0, &other.q);
        self.f.axpy(1.0, &other.f);
    }

    /// `sum_c inner(g_c, h_c)`: the directional derivative along `h`.
    pub fn pair(&self, h: &TangentTriple) -> f64 {
        grid::inner(&self.p, &h.h1) + grid::inner(&self.q, &h.h2) + grid::inner(&self.f, &h.h3)
    }
}

/// A perturbation direction `(h1, h2, h3)`; `h1` vanishes on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentTriple {
    pub h1: Field2D,
    pub h2: Field2D,
    pub h3: Field2D,
}

impl TangentTriple {
    pub fn new(h1: Field2D, h2: Field2D, h3: Field2D) -> Result<Self, FunctionalError> {
        if !(h1.same_grid(&h2) && h1.same_grid(&h3)) {
            return Err(FunctionalError::Invalid("h1, h2, h3 must share one grid".into()));
        }
        if grid::boundary_restrict(&h1).values().iter().any(|&v| v != 0.0) {
            return Err(FunctionalError::Invalid("h1 must vanish on the boundary".into()));
        }
        Ok(Self { h1, h2, h3 })
    }

    pub fn zeros(g: Grid2D) -> Self {
        Self { h1: Field2D::zeros(g), h2: Field2D::zeros(g), h3: Field2D::zeros(g) }
    }

    /// `c + t h`.
    pub fn offset(&self, c: &CoefficientTriple, t: f64) -> CoefficientTriple {
        let mut out = c.clone();
        out.p.axpy(t, &self.h1);
        out.q.axpy(t, &self.h2);
        out.f.axpy(t, &self.h3);
        out
    }
}

/// One measured solution `u_lambda` together with the face derivatives the
/// residual functional should use for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub lambda: f64,
    pub u: Field2D,
    pub faces: FaceGradients,
}

impl Observation {
    /// Face derivatives taken as plain differences of `u`.
    pub fn new(lambda: f64, u: Field2D) -> Self {
        let faces = FaceGradients::from_differences(&u);
        Self { lambda, u, faces }
    }

    pub fn with_faces(lambda: f64, u: Field2D, faces: FaceGradients) -> Self {
        assert!(faces.grid() == u.grid(), "grid mismatch");
        Self { lambda, u, faces }
    }
}

/// Everything known about one inverse problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    grid: Grid2D,
    pub observations: Vec<Observation>,
    /// Values of the true `p` on the boundary; descent keeps them fixed.
    pub p_boundary: BoundaryValues,
    /// Ground truth, when known, for error reporting only.
    pub truth: Option<CoefficientTriple>,
}

impl ProblemInstance {
    pub fn new(
        observations: Vec<Observation>,
        p_boundary: BoundaryValues,
        truth: Option<CoefficientTriple>,
    ) -> Result<Self, FunctionalError> {
        let first = observations
            .first()
            .ok_or_else(|| FunctionalError::Invalid("at least one lambda is required".into()))?;
        let grid = *first.u.grid();
        if observations.iter().any(|o| *o.u.grid() != grid) || *p_boundary.grid() != grid {
            return Err(FunctionalError::Invalid("observations must share one grid".into()));
        }
        if let Some(t) = &truth {
            if *t.grid() != grid {
                return Err(FunctionalError::Invalid("truth lives on a different grid".into()));
            }
        }
        Ok(Self { grid, observations, p_boundary, truth })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.lambda).collect()
    }

    /// Soft checks for a recovery of the given components. Joint recovery of
    /// all three coefficients needs at least three distinct lambdas.
    pub fn warnings(&self, recover: [bool; 3]) -> Vec<String> {
        let mut out = Vec::new();
        let mut distinct = self.lambdas();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if recover.iter().all(|&r| r) && distinct.len() < 3 {
            out.push(format!(
                "recovering p, q and f jointly with {} distinct lambda value(s); at least 3 are needed for a unique minimizer",
                distinct.len()
            ));
        }
        out
    }
}

/// Node-wise L2 gradient from per-face sensitivities `dG/dp_face`: each face
/// value is distributed to its two nodes through the face-average partials
/// and divided by the node quadrature weight.
pub(crate) fn faces_to_nodes(
    p: &Field2D,
    avg: FaceAverage,
    sx: &[f64],
    sy: &[f64],
) -> Field2D {
    let g = *p.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut acc = vec![0.0; g.len()];
    for j in 0..ny {
        for i in 0..nx - 1 {
            let s = sx[j * (nx - 1) + i];
            let (wa, wb) = avg.partials(p.at(i, j), p.at(i + 1, j));
            acc[g.idx(i, j)] += wa * s;
            acc[g.idx(i + 1, j)] += wb * s;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let s = sy[j * nx + i];
            let (wa, wb) = avg.partials(p.at(i, j), p.at(i, j + 1));
            acc[g.idx(i, j)] += wa * s;
            acc[g.idx(i, j + 1)] += wb * s;
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            acc[g.idx(i, j)] /= g.weight(i, j);
        }
    }
    Field2D::from_values(g, acc).expect("finite sensitivities")
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn triple_rejects_mixed_grids() {
        let a = Field2D::zeros(sq(5));
        let b = Field2D::zeros(sq(6));
        assert!(CoefficientTriple::new(a.clone(), a.clone(), b).is_err());
        assert!(CoefficientTriple::new(a.clone(), a.clone(), a).is_ok());
    }

    #[test]
    fn tangent_requires_zero_boundary_h1() {
        let g = sq(5);
        let one = Field2D::constant(g, 1.0);
        assert!(TangentTriple::new(one.clone(), one.clone(), one.clone()).is_err());
        assert!(TangentTriple::new(grid::zero_boundary(&one), one.clone(), one).is_ok());
    }

    #[test]
    fn instance_validation() {
        let g = sq(5);
        let bv = grid::boundary_restrict(&Field2D::constant(g, 1.0));
        assert!(ProblemInstance::new(vec![], bv.clone(), None).is_err());
        let one = ProblemInstance::new(vec![Observation::new(0.0, Field2D::zeros(g))], bv.clone(), None).unwrap();
        assert_eq!(one.warnings([true, true, true]).len(), 1);
        assert!(one.warnings([true, false, false]).is_empty());
        let three = ProblemInstance::new(
            [0.0, 1.0, 2.0].iter().map(|&l| Observation::new(l, Field2D::zeros(g))).collect(),
            bv,
            None,
        )
        .unwrap();
        assert!(three.warnings([true, true, true]).is_empty());
        assert_eq!(three.lambdas(), vec![0.0, 1.0, 2.0]);
    }
}
