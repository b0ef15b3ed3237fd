//! Five-point finite-difference discretization of
//! `-div(p grad u) + lambda q u = f` and the boundary-value solves built on it.
//!
//! Interior rows use the conservative flux form
//!
//! ```text
//! (Au)_ij = [p_{i+1/2,j}(u_ij - u_{i+1,j}) + p_{i-1/2,j}(u_ij - u_{i-1,j})] / hx^2
//!         + [p_{i,j+1/2}(u_ij - u_{i,j+1}) + p_{i,j-1/2}(u_ij - u_{i,j-1})] / hy^2
//!         + lambda q_ij u_ij
//! ```
//!
//! with face values averaged from the two neighbouring nodes. Dirichlet
//! nodes are eliminated into the right-hand side, which keeps the interior
//! block symmetric.

pub mod linalg;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, BoundaryValues, Field2D, Grid2D};
use linalg::{BandCholesky, BandMatrix, LinearOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// How a face coefficient is formed from the two nodes it joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    #[inline]
    pub fn value(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => {
                let s = a + b;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / s
                }
            }
        }
    }

    /// Partial derivatives of [`FaceAverage::value`] with respect to `a` and `b`.
    #[inline]
    pub fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            FaceAverage::Arithmetic => (0.5, 0.5),
            FaceAverage::Harmonic => {
                let s = a + b;
                if s == 0.0 {
                    (0.0, 0.0)
                } else {
                    (2.0 * b * b / (s * s), 2.0 * a * a / (s * s))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// MINRES; tolerates indefinite operators.
    #[default]
    Minres,
    /// Banded LU with partial pivoting.
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual target.
    pub tol: f64,
    pub max_iters: usize,
    pub kind: SolverKind,
    /// Retry with the banded direct solver when MINRES stalls.
    pub direct_fallback: bool,
    pub face_average: FaceAverage,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 10_000,
            kind: SolverKind::Minres,
            direct_fallback: true,
            face_average: FaceAverage::Arithmetic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Five-point coefficients of one interior row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil5 {
    pub center: f64,
    pub north: f64,
    pub south: f64,
    pub east: f64,
    pub west: f64,
}

/// Discrete `L = -div(p grad .) + s` with `s = lambda q`, stored by faces.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilOperator {
    grid: Grid2D,
    /// `p` on x-faces, `(nx-1) * ny`, index `j*(nx-1)+i`.
    px: Vec<f64>,
    /// `p` on y-faces, `nx * (ny-1)`, index `j*nx+i`.
    py: Vec<f64>,
    /// zeroth-order coefficient `lambda q` per node.
    shift: Vec<f64>,
}

pub fn assemble(p: &Field2D, q: &Field2D, lambda: f64, avg: FaceAverage) -> StencilOperator {
    grid::assert_same_grid(p, q);
    let g = *p.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut px = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            px.push(avg.value(p.at(i, j), p.at(i + 1, j)));
        }
    }
    let mut py = Vec::with_capacity(nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            py.push(avg.value(p.at(i, j), p.at(i, j + 1)));
        }
    }
    let shift = q.values().iter().map(|&v| lambda * v).collect();
    StencilOperator { grid: g, px, py, shift }
}

/// Directional derivative of [`assemble`] at `p` along `(dp, dq)`: the
/// operator `-div(dp grad .) + lambda dq`, with face values linearized
/// through the face average.
pub fn assemble_tangent(
    p: &Field2D,
    dp: &Field2D,
    dq: &Field2D,
    lambda: f64,
    avg: FaceAverage,
) -> StencilOperator {
    grid::assert_same_grid(p, dp);
    grid::assert_same_grid(p, dq);
    let g = *p.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let lin = |a: (usize, usize), b: (usize, usize)| {
        let (wa, wb) = avg.partials(p.at(a.0, a.1), p.at(b.0, b.1));
        wa * dp.at(a.0, a.1) + wb * dp.at(b.0, b.1)
    };
    let mut px = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            px.push(lin((i, j), (i + 1, j)));
        }
    }
    let mut py = Vec::with_capacity(nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            py.push(lin((i, j), (i, j + 1)));
        }
    }
    let shift = dq.values().iter().map(|&v| lambda * v).collect();
    StencilOperator { grid: g, px, py, shift }
}

impl StencilOperator {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// `-lap + shift` with a constant shift (`p = 1`).
    pub fn shifted_laplacian(grid: Grid2D, shift: f64) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        Self {
            grid,
            px: vec![1.0; (nx - 1) * ny],
            py: vec![1.0; nx * (ny - 1)],
            shift: vec![shift; grid.len()],
        }
    }

    #[inline]
    pub fn px(&self, i: usize, j: usize) -> f64 {
        self.px[j * (self.grid.nx() - 1) + i]
    }

    #[inline]
    pub fn py(&self, i: usize, j: usize) -> f64 {
        self.py[j * self.grid.nx() + i]
    }

    #[inline]
    pub fn shift_at(&self, i: usize, j: usize) -> f64 {
        self.shift[self.grid.idx(i, j)]
    }

    /// Coefficients of the interior row at `(i, j)`.
    pub fn coefficients(&self, i: usize, j: usize) -> Stencil5 {
        assert!(!self.grid.is_boundary(i, j), "({i},{j}) is a Dirichlet node");
        let ihx2 = 1.0 / (self.grid.hx() * self.grid.hx());
        let ihy2 = 1.0 / (self.grid.hy() * self.grid.hy());
        let (e, w) = (self.px(i, j) * ihx2, self.px(i - 1, j) * ihx2);
        let (n, s) = (self.py(i, j) * ihy2, self.py(i, j - 1) * ihy2);
        Stencil5 {
            center: e + w + n + s + self.shift_at(i, j),
            north: -n,
            south: -s,
            east: -e,
            west: -w,
        }
    }

    /// `(A u)` at interior nodes; boundary nodes act as identity rows.
    pub fn apply(&self, u: &Field2D) -> Field2D {
        assert!(*u.grid() == self.grid, "grid mismatch");
        let mut out = u.clone();
        for (i, j) in self.grid.interior_nodes() {
            let c = self.coefficients(i, j);
            let v = c.center * u.at(i, j)
                + c.east * u.at(i + 1, j)
                + c.west * u.at(i - 1, j)
                + c.north * u.at(i, j + 1)
                + c.south * u.at(i, j - 1);
            out.set(i, j, v);
        }
        out
    }

    /// Symmetric bilinear form `a(u, w) = sum_faces wt p_f du dw / h^2 * hx hy
    /// + sum_nodes omega shift u w`, the weak form of this operator. For `w`
    /// vanishing on the boundary, `a(u, w) = inner(A u, w)`.
    pub fn energy(&self, u: &Field2D, w: &Field2D) -> f64 {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.hx(), g.hy());
        let mut sx = 0.0;
        for j in 0..ny {
            let wt = g.x_face_weight(j);
            for i in 0..nx - 1 {
                sx += wt * self.px(i, j) * (u.at(i + 1, j) - u.at(i, j)) * (w.at(i + 1, j) - w.at(i, j));
            }
        }
        let mut sy = 0.0;
        for j in 0..ny - 1 {
            for i in 0..nx {
                let wt = g.y_face_weight(i);
                sy += wt * self.py(i, j) * (u.at(i, j + 1) - u.at(i, j)) * (w.at(i, j + 1) - w.at(i, j));
            }
        }
        let mut s0 = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                s0 += g.weight(i, j) * self.shift_at(i, j) * u.at(i, j) * w.at(i, j);
            }
        }
        (sx / (hx * hx) + sy / (hy * hy)) * hx * hy + s0
    }

    /// First interior node of a coupling component that touches neither a
    /// Dirichlet node nor a nonzero shift. Such a component makes the
    /// interior block singular (constants on it lie in the kernel).
    pub fn floating_node(&self) -> Option<(usize, usize)> {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let mut seen = vec![false; g.len()];
        let mut stack = Vec::new();
        for (si, sj) in g.interior_nodes() {
            if seen[g.idx(si, sj)] {
                continue;
            }
            seen[g.idx(si, sj)] = true;
            stack.push((si, sj));
            let mut anchored = false;
            while let Some((i, j)) = stack.pop() {
                if self.shift_at(i, j) != 0.0 {
                    anchored = true;
                }
                let nbrs = [
                    (i + 1, j, self.px(i, j)),
                    (i - 1, j, self.px(i - 1, j)),
                    (i, j + 1, self.py(i, j)),
                    (i, j - 1, self.py(i, j - 1)),
                ];
                for (a, b, c) in nbrs {
                    if c == 0.0 {
                        continue;
                    }
                    if a == 0 || b == 0 || a == nx - 1 || b == ny - 1 {
                        anchored = true;
                    } else if !seen[g.idx(a, b)] {
                        seen[g.idx(a, b)] = true;
                        stack.push((a, b));
                    }
                }
            }
            if !anchored {
                return Some((si, sj));
            }
        }
        None
    }

    pub fn interior(&self) -> InteriorOperator<'_> {
        InteriorOperator { op: self }
    }

    /// Smallest Rayleigh quotient `<Ax,x>/<x,x>` over `samples` random
    /// interior vectors. A negative value proves the interior block is not
    /// positive definite; a positive value is only evidence.
    pub fn probe_positivity(&self, samples: usize, seed: u64) -> f64 {
        let n = self.grid.interior_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.interior();
        let mut y = vec![0.0; n];
        let mut best = f64::INFINITY;
        for _ in 0..samples {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            a.apply(&x, &mut y);
            best = best.min(linalg::dot(&x, &y) / linalg::dot(&x, &x));
        }
        best
    }

    fn band_matrix(&self) -> BandMatrix {
        let g = self.grid;
        let bw = g.nx() - 2;
        let mut m = BandMatrix::zeros(g.interior_len(), bw, bw);
        for (i, j) in g.interior_nodes() {
            let r = g.interior_idx(i, j);
            let c = self.coefficients(i, j);
            m.set(r, r, c.center);
            if i > 1 {
                m.set(r, g.interior_idx(i - 1, j), c.west);
            }
            if i < g.nx() - 2 {
                m.set(r, g.interior_idx(i + 1, j), c.east);
            }
            if j > 1 {
                m.set(r, g.interior_idx(i, j - 1), c.south);
            }
            if j < g.ny() - 2 {
                m.set(r, g.interior_idx(i, j + 1), c.north);
            }
        }
        m
    }

    /// Eliminated right-hand side: `f` at interior nodes minus the couplings
    /// to the Dirichlet values in `u_bc`.
    fn eliminated_rhs(&self, f: &Field2D, u_bc: &Field2D) -> Vec<f64> {
        let g = self.grid;
        let mut b = vec![0.0; g.interior_len()];
        for (i, j) in g.interior_nodes() {
            let c = self.coefficients(i, j);
            let mut v = f.at(i, j);
            if i == 1 {
                v -= c.west * u_bc.at(0, j);
            }
            if i == g.nx() - 2 {
                v -= c.east * u_bc.at(g.nx() - 1, j);
            }
            if j == 1 {
                v -= c.south * u_bc.at(i, 0);
            }
            if j == g.ny() - 2 {
                v -= c.north * u_bc.at(i, g.ny() - 1);
            }
            b[g.interior_idx(i, j)] = v;
        }
        b
    }
}

/// The interior (Dirichlet-eliminated) block of a [`StencilOperator`].
pub struct InteriorOperator<'a> {
    op: &'a StencilOperator,
}

impl LinearOperator for InteriorOperator<'_> {
    fn dim(&self) -> usize {
        self.op.grid.interior_len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.op.grid;
        let m = g.nx() - 2;
        for (i, j) in g.interior_nodes() {
            let r = g.interior_idx(i, j);
            let c = self.op.coefficients(i, j);
            let mut v = c.center * x[r];
            if i > 1 {
                v += c.west * x[r - 1];
            }
            if i < g.nx() - 2 {
                v += c.east * x[r + 1];
            }
            if j > 1 {
                v += c.south * x[r - m];
            }
            if j < g.ny() - 2 {
                v += c.north * x[r + m];
            }
            y[r] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Minres,
    Banded,
    Cholesky,
}

/// A converged solve with its diagnostics.
#[derive(Debug, Clone)]
pub struct Solved {
    pub u: Field2D,
    /// `||A u - b|| / ||b||` over interior nodes (0 when `b = 0`).
    pub relative_residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

fn scatter_interior(grid: Grid2D, x: &[f64], base: &Field2D) -> Field2D {
    let mut u = base.clone();
    for (i, j) in grid.interior_nodes() {
        u.set(i, j, x[grid.interior_idx(i, j)]);
    }
    u
}

fn gather_interior(u: &Field2D) -> Vec<f64> {
    let g = *u.grid();
    g.interior_nodes().map(|(i, j)| u.at(i, j)).collect()
}

/// Solves `A u = f` at interior nodes with `u = u_bc` on the boundary.
///
/// The residual bound `||A u - b|| <= tol ||b||` is measured against the
/// eliminated right-hand side `b`, so problems with `f = 0` and nonzero
/// boundary data are still well scaled. `guess` warm-starts MINRES.
pub fn solve_with(
    op: &StencilOperator,
    f: &Field2D,
    u_bc: &Field2D,
    guess: Option<&Field2D>,
    cfg: &SolverConfig,
) -> Result<Solved, SolverError> {
    cfg.validate()?;
    let g = op.grid;
    assert!(*f.grid() == g && *u_bc.grid() == g, "grid mismatch");
    if op.floating_node().is_some() {
        return Err(SolverError::NonConvergence { iterations: 0, residual: f64::INFINITY });
    }
    let b = op.eliminated_rhs(f, u_bc);
    let bnorm = linalg::norm(&b);
    let base = grid::zero_boundary(&Field2D::zeros(g));
    let base = grid::boundary_overwrite(&base, u_bc);
    if bnorm == 0.0 {
        return Ok(Solved { u: base, relative_residual: 0.0, iterations: 0, method: SolveMethod::Minres });
    }
    let interior = op.interior();
    let mut last = (0, f64::INFINITY);
    if cfg.kind == SolverKind::Minres {
        let x0 = guess.map(gather_interior);
        let out = linalg::minres(&interior, &b, x0.as_deref(), cfg.tol, cfg.max_iters);
        let rel = out.residual / bnorm;
        if out.converged && out.x.iter().all(|v| v.is_finite()) {
            return Ok(Solved {
                u: scatter_interior(g, &out.x, &base),
                relative_residual: rel,
                iterations: out.iterations,
                method: SolveMethod::Minres,
            });
        }
        last = (out.iterations, rel);
        if !cfg.direct_fallback {
            return Err(SolverError::NonConvergence { iterations: last.0, residual: last.1 });
        }
    }
    let lu = op.band_matrix().lu().ok_or(SolverError::NonConvergence {
        iterations: last.0,
        residual: last.1,
    })?;
    let x = lu.solve(&b);
    let res = linalg::residual_norm(&interior, &x, &b) / bnorm;
    if !(res <= cfg.tol.max(1e3 * f64::EPSILON)) || !x.iter().all(|v| v.is_finite()) {
        return Err(SolverError::NonConvergence { iterations: last.0, residual: res.min(last.1) });
    }
    Ok(Solved {
        u: scatter_interior(g, &x, &base),
        relative_residual: res,
        iterations: last.0,
        method: SolveMethod::Banded,
    })
}

/// `-div(p grad u) + lambda q u = f` with `u = phi` on the boundary.
pub fn solve_dirichlet(
    p: &Field2D,
    q: &Field2D,
    lambda: f64,
    f: &Field2D,
    phi: &BoundaryValues,
    cfg: &SolverConfig,
) -> Result<Field2D, SolverError> {
    let op = assemble(p, q, lambda, cfg.face_average);
    let u_bc = phi.extend_with(0.0);
    solve_with(&op, f, &u_bc, None, cfg).map(|s| s.u)
}

/// `L^{-1} rhs` with zero Dirichlet data.
pub fn apply_inverse_l(
    op: &StencilOperator,
    rhs: &Field2D,
    cfg: &SolverConfig,
) -> Result<Field2D, SolverError> {
    let zero = Field2D::zeros(op.grid);
    solve_with(op, rhs, &zero, None, cfg).map(|s| s.u)
}

/// Cached Cholesky factor of the interior block of `-lap + shift`.
pub struct ShiftedLaplacian {
    op: StencilOperator,
    chol: BandCholesky,
}

type CacheKey = (u64, u64, u64, u64, usize, usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<ShiftedLaplacian>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<ShiftedLaplacian>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl ShiftedLaplacian {
    /// Factorization of `-lap + shift` on `grid`, built once per process
    /// and shared. `shift` must be `>= 0`.
    pub fn get(grid: Grid2D, shift: f64) -> Arc<ShiftedLaplacian> {
        assert!(shift >= 0.0, "shift must be nonnegative");
        let (x0, x1, y0, y1) = grid.bounds();
        let key = (
            x0.to_bits(),
            x1.to_bits(),
            y0.to_bits(),
            y1.to_bits(),
            grid.nx(),
            grid.ny(),
            shift.to_bits(),
        );
        let mut map = cache().lock().expect("solver cache poisoned");
        map.entry(key)
            .or_insert_with(|| Arc::new(Self::factor(grid, shift)))
            .clone()
    }

    fn factor(grid: Grid2D, shift: f64) -> Self {
        let op = StencilOperator::shifted_laplacian(grid, shift);
        let m = grid.nx() - 2;
        let ihx2 = 1.0 / (grid.hx() * grid.hx());
        let ihy2 = 1.0 / (grid.hy() * grid.hy());
        let chol = BandCholesky::factor(grid.interior_len(), m, |r, c| {
            if r == c {
                2.0 * ihx2 + 2.0 * ihy2 + shift
            } else if r - c == m {
                -ihy2
            } else if r - c == 1 && r % m != 0 {
                -ihx2
            } else {
                0.0
            }
        })
        .expect("-lap + shift is positive definite");
        Self { op, chol }
    }

    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    /// Solves with zero Dirichlet data; boundary values of `rhs` are ignored.
    pub fn solve(&self, rhs: &Field2D, cfg: &SolverConfig) -> Result<Field2D, SolverError> {
        cfg.validate()?;
        let g = self.op.grid;
        assert!(*rhs.grid() == g, "grid mismatch");
        let b = gather_interior(rhs);
        let bnorm = linalg::norm(&b);
        let zero = Field2D::zeros(g);
        if bnorm == 0.0 {
            return Ok(zero);
        }
        let mut x = self.chol.solve(&b);
        let interior = self.op.interior();
        let mut res = linalg::residual_norm(&interior, &x, &b) / bnorm;
        // one step of iterative refinement if round-off left us short
        if res > cfg.tol {
            let mut ax = vec![0.0; b.len()];
            interior.apply(&x, &mut ax);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let dx = self.chol.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            res = linalg::residual_norm(&interior, &x, &b) / bnorm;
        }
        if !(res <= cfg.tol) {
            return Err(SolverError::NonConvergence { iterations: 1, residual: res });
        }
        Ok(scatter_interior(g, &x, &zero))
    }
}

/// `-lap v = rhs`, `v = 0` on the boundary.
pub fn solve_poisson_zero_bc(rhs: &Field2D, cfg: &SolverConfig) -> Result<Field2D, SolverError> {
    ShiftedLaplacian::get(*rhs.grid(), 0.0).solve(rhs, cfg)
}

/// `-lap g + g = rhs`, `g = 0` on the boundary.
pub fn solve_helmholtz_zero_bc(rhs: &Field2D, cfg: &SolverConfig) -> Result<Field2D, SolverError> {
    ShiftedLaplacian::get(*rhs.grid(), 1.0).solve(rhs, cfg)
}
