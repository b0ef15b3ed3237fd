//! Uniform node-centered grids on a rectangle, sampled fields, and the
//! discrete calculus shared by the solver and the functionals.
//!
//! Node ordering is row-major with `x` varying fastest: node `(i, j)` sits at
//! `(x0 + i*hx, y0 + j*hy)` and is stored at flat index `j * nx + i`. Every
//! serialized grid (CSV rows, JSON `values`) uses the same order, so row `j`
//! of a CSV file is the line `y = y0 + j*hy`.
//!
//! Quadrature is the tensor trapezoidal rule. Differences across faces use
//! the matching trapezoidal face weights, which makes the face-based energy
//! ([`energy_inner`]) the exact summation-by-parts partner of the five-point
//! stencil assembled in [`crate::pde_solver`].

pub mod io;

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Uniform rectangular discretization of `[x0,x1] x [y0,y1]` with `nx * ny` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nx: usize,
    ny: usize,
}

impl Grid2D {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        if nx < 3 || ny < 3 {
            return Err(GridError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got nx={nx}, ny={ny}"
            )));
        }
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            return Err(GridError::InvalidGrid("bounds must be finite".into()));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(GridError::InvalidGrid(format!(
                "empty domain [{x0},{x1}]x[{y0},{y1}]"
            )));
        }
        Ok(Self { x0, x1, y0, y1, nx, ny })
    }

    /// `[-1,1]^2` with `n` nodes per axis.
    pub fn unit_square(n: usize) -> Result<Self, GridError> {
        Self::new(-1.0, 1.0, -1.0, 1.0, n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.x0, self.x1, self.y0, self.y1)
    }

    pub fn hx(&self) -> f64 {
        (self.x1 - self.x0) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y1 - self.y0) / (self.ny - 1) as f64
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.x1
        } else {
            self.x0 + i as f64 * self.hx()
        }
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny - 1 {
            self.y1
        } else {
            self.y0 + j as f64 * self.hy()
        }
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy * self.hx() * self.hy()
    }

    /// Trapezoidal weight of the x-directed face between `(i, j)` and
    /// `(i+1, j)`, relative to a full cell: faces on the bottom/top edge
    /// carry half weight.
    #[inline]
    pub fn x_face_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny - 1 {
            0.5
        } else {
            1.0
        }
    }

    /// Same as [`Grid2D::x_face_weight`] for the y-directed face between
    /// `(i, j)` and `(i, j+1)`.
    #[inline]
    pub fn y_face_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx - 1 {
            0.5
        } else {
            1.0
        }
    }

    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    /// Flat index of interior node `(i, j)` in the interior-only ordering
    /// used by the linear solvers.
    #[inline]
    pub fn interior_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(!self.is_boundary(i, j));
        (j - 1) * (self.nx - 2) + (i - 1)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.ny - 1).flat_map(move |j| (1..self.nx - 1).map(move |i| (i, j)))
    }

    /// Boundary nodes in flat-index order.
    pub fn boundary_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len())
            .map(move |k| self.ij(k))
            .filter(move |&(i, j)| self.is_boundary(i, j))
    }

    pub fn boundary_mask(&self) -> BoundaryMask {
        BoundaryMask {
            grid: *self,
            flags: (0..self.len())
                .map(|k| {
                    let (i, j) = self.ij(k);
                    self.is_boundary(i, j)
                })
                .collect(),
        }
    }
}

/// Scalar samples on every node of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Field2D {
    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn same_grid(&self, other: &Field2D) -> bool {
        self.grid == other.grid
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Node-wise combination of two fields on the same grid.
    ///
    /// Panics if the grids differ.
    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Field2D {
        assert_same_grid(self, other);
        Field2D {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Field2D {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Field2D) {
        assert_same_grid(self, other);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest node-wise deviation over interior nodes only.
    pub fn interior_max_abs(&self) -> f64 {
        self.grid
            .interior_nodes()
            .fold(0.0, |m, (i, j)| m.max(self.at(i, j).abs()))
    }

    /// L2 norm under the trapezoidal rule.
    pub fn l2_norm(&self) -> f64 {
        inner(self, self).max(0.0).sqrt()
    }

    /// L1 norm under the trapezoidal rule.
    pub fn l1_norm(&self) -> f64 {
        integrate(&self.map(f64::abs))
    }
}

impl Add for &Field2D {
    type Output = Field2D;
    fn add(self, rhs: &Field2D) -> Field2D {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field2D {
    type Output = Field2D;
    fn sub(self, rhs: &Field2D) -> Field2D {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Field2D {
    type Output = Field2D;
    fn mul(self, rhs: &Field2D) -> Field2D {
        self.zip_map(rhs, |a, b| a * b)
    }
}

#[track_caller]
pub(crate) fn assert_same_grid(a: &Field2D, b: &Field2D) {
    assert!(
        a.grid == b.grid,
        "grid mismatch: {:?} vs {:?}",
        a.grid,
        b.grid
    );
}

/// Per-node flag, `true` exactly on edge nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    grid: Grid2D,
    flags: Vec<bool>,
}

impl BoundaryMask {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&b| b).count()
    }
}

/// Values of a field on the boundary nodes, in flat-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    grid: Grid2D,
    values: Vec<f64>,
}

impl BoundaryValues {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Boundary values of `f(x, y)`.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        boundary_restrict(&Field2D::from_fn(grid, f))
    }

    /// A field equal to these values on the boundary and `interior` inside.
    pub fn extend_with(&self, interior: f64) -> Field2D {
        let mut out = Field2D::constant(self.grid, interior);
        for (&v, (i, j)) in self.values.iter().zip(self.grid.boundary_nodes()) {
            out.set(i, j, v);
        }
        out
    }
}

/// Trapezoidal approximation of the integral of `a` over the domain.
pub fn integrate(a: &Field2D) -> f64 {
    let g = &a.grid;
    let mut s = 0.0;
    for j in 0..g.ny() {
        let wy = if j == 0 || j == g.ny() - 1 { 0.5 } else { 1.0 };
        let row = &a.values[j * g.nx()..(j + 1) * g.nx()];
        let inner: f64 = row[1..g.nx() - 1].iter().sum::<f64>() + 0.5 * (row[0] + row[g.nx() - 1]);
        s += wy * inner;
    }
    s * g.hx() * g.hy()
}

/// `integrate(a * b)`. Panics on grid mismatch.
pub fn inner(a: &Field2D, b: &Field2D) -> f64 {
    assert_same_grid(a, b);
    let g = &a.grid;
    let mut s = 0.0;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let k = g.idx(i, j);
            s += g.weight(i, j) * a.values[k] * b.values[k];
        }
    }
    s
}

/// Node gradient: central differences inside, second-order one-sided
/// differences on the edges. Exact for fields that are quadratic along
/// each axis.
pub fn gradient(a: &Field2D) -> (Field2D, Field2D) {
    let g = a.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let mut gx = Field2D::zeros(g);
    let mut gy = Field2D::zeros(g);
    for j in 0..ny {
        for i in 0..nx {
            let dx = if i == 0 {
                (-3.0 * a.at(0, j) + 4.0 * a.at(1, j) - a.at(2, j)) / (2.0 * hx)
            } else if i == nx - 1 {
                (3.0 * a.at(nx - 1, j) - 4.0 * a.at(nx - 2, j) + a.at(nx - 3, j)) / (2.0 * hx)
            } else {
                (a.at(i + 1, j) - a.at(i - 1, j)) / (2.0 * hx)
            };
            let dy = if j == 0 {
                (-3.0 * a.at(i, 0) + 4.0 * a.at(i, 1) - a.at(i, 2)) / (2.0 * hy)
            } else if j == ny - 1 {
                (3.0 * a.at(i, ny - 1) - 4.0 * a.at(i, ny - 2) + a.at(i, ny - 3)) / (2.0 * hy)
            } else {
                (a.at(i, j + 1) - a.at(i, j - 1)) / (2.0 * hy)
            };
            gx.set(i, j, dx);
            gy.set(i, j, dy);
        }
    }
    (gx, gy)
}

pub fn boundary_restrict(a: &Field2D) -> BoundaryValues {
    let g = a.grid;
    BoundaryValues {
        grid: g,
        values: g.boundary_nodes().map(|(i, j)| a.at(i, j)).collect(),
    }
}

/// Copy of `a` whose boundary nodes are taken from `src`.
pub fn boundary_overwrite(a: &Field2D, src: &Field2D) -> Field2D {
    assert_same_grid(a, src);
    let mut out = a.clone();
    for (i, j) in a.grid.boundary_nodes() {
        out.set(i, j, src.at(i, j));
    }
    out
}

/// Copy of `a` with the given boundary values written in.
pub fn boundary_apply(a: &Field2D, bv: &BoundaryValues) -> Field2D {
    assert!(a.grid == bv.grid, "grid mismatch");
    let mut out = a.clone();
    for (&v, (i, j)) in bv.values.iter().zip(a.grid.boundary_nodes()) {
        out.set(i, j, v);
    }
    out
}

/// Copy of `a` with every boundary node set to zero.
pub fn zero_boundary(a: &Field2D) -> Field2D {
    let mut out = a.clone();
    for (i, j) in a.grid.boundary_nodes() {
        out.set(i, j, 0.0);
    }
    out
}

/// Normal derivatives on the faces between neighbouring nodes.
///
/// `dx[j*(nx-1)+i]` approximates `du/dx` midway between `(i,j)` and
/// `(i+1,j)`; `dy[j*nx+i]` approximates `du/dy` midway between `(i,j)` and
/// `(i,j+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGradients {
    grid: Grid2D,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FaceGradients {
    /// Plain two-point differences, the derivatives implied by the stencil.
    pub fn from_differences(u: &Field2D) -> Self {
        let g = u.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.hx(), g.hy());
        let mut dx = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                dx.push((u.at(i + 1, j) - u.at(i, j)) / hx);
            }
        }
        let mut dy = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                dy.push((u.at(i, j + 1) - u.at(i, j)) / hy);
            }
        }
        Self { grid: g, dx, dy }
    }

    /// Face values from node derivatives by averaging the two endpoints.
    pub fn from_node_derivatives(ux: &Field2D, uy: &Field2D) -> Self {
        assert_same_grid(ux, uy);
        let g = ux.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let mut dx = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                dx.push(0.5 * (ux.at(i, j) + ux.at(i + 1, j)));
            }
        }
        let mut dy = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                dy.push(0.5 * (uy.at(i, j) + uy.at(i, j + 1)));
            }
        }
        Self { grid: g, dx, dy }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn x_at(&self, i: usize, j: usize) -> f64 {
        self.dx[j * (self.grid.nx() - 1) + i]
    }

    #[inline]
    pub fn y_at(&self, i: usize, j: usize) -> f64 {
        self.dy[j * self.grid.nx() + i]
    }
}

/// Discrete Dirichlet form `int grad a . grad b` built from face
/// differences with trapezoidal face weights.
///
/// For `v` vanishing on the boundary and `-lap_h v = r` at interior nodes,
/// `energy_inner(v, v) == inner(r, v)` up to solver round-off.
pub fn energy_inner(a: &Field2D, b: &Field2D) -> f64 {
    assert_same_grid(a, b);
    let g = a.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let mut sx = 0.0;
    for j in 0..ny {
        let w = g.x_face_weight(j);
        for i in 0..nx - 1 {
            sx += w * (a.at(i + 1, j) - a.at(i, j)) * (b.at(i + 1, j) - b.at(i, j));
        }
    }
    let mut sy = 0.0;
    for j in 0..ny - 1 {
        for i in 0..nx {
            let w = g.y_face_weight(i);
            sy += w * (a.at(i, j + 1) - a.at(i, j)) * (b.at(i, j + 1) - b.at(i, j));
        }
    }
    (sx / (hx * hx) + sy / (hy * hy)) * hx * hy
}

/// `energy_inner(a, a)`.
pub fn dirichlet_energy(a: &Field2D) -> f64 {
    energy_inner(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sq(n: usize) -> Grid2D {
        Grid2D::unit_square(n).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(Grid2D::unit_square(2).is_err());
        assert!(Grid2D::new(0.0, 1.0, 0.0, 1.0, 3, 2).is_err());
        assert!(Grid2D::new(1.0, 0.0, 0.0, 1.0, 5, 5).is_err());
    }

    #[test]
    fn spacing_and_indexing() {
        let g = Grid2D::new(0.0, 2.0, -1.0, 1.0, 5, 3).unwrap();
        assert_eq!(g.hx(), 0.5);
        assert_eq!(g.hy(), 1.0);
        assert_eq!(g.idx(0, 0), 0);
        assert_eq!(g.idx(4, 0), 4);
        assert_eq!(g.idx(0, 1), 5);
        assert_eq!(g.ij(7), (2, 1));
        assert_eq!(g.x(4), 2.0);
        assert_eq!(g.y(2), 1.0);
        assert_eq!(g.interior_len(), 3);
    }

    #[test]
    fn field_rejects_bad_input() {
        let g = sq(3);
        assert!(matches!(
            Field2D::from_values(g, vec![0.0; 8]),
            Err(GridError::LengthMismatch { expected: 9, got: 8 })
        ));
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(matches!(
            Field2D::from_values(g, v),
            Err(GridError::NonFinite { index: 4 })
        ));
    }

    #[test]
    fn integrate_constants() {
        let g = sq(49);
        assert!((integrate(&Field2D::constant(g, 1.0)) - 4.0).abs() < 1e-12);
        assert_eq!(integrate(&Field2D::zeros(g)), 0.0);
    }

    #[test]
    fn integrate_x_squared() {
        let g = sq(49);
        let a = Field2D::from_fn(g, |x, _| x * x);
        let err = integrate(&a) - 4.0 / 3.0;
        // composite trapezoid on [-1,1]: (b-a) h^2 f'' / 12 = h^2 / 3, times the y-length 2
        let h = g.hx();
        assert!((err - 2.0 * h * h / 3.0).abs() < 1e-12, "err {err}");
        assert!(err.abs() < 1.2e-3, "err {err}");
    }

    #[test]
    fn inner_products() {
        let g = sq(49);
        let a = Field2D::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
        assert_eq!(inner(&a, &Field2D::zeros(g)), 0.0);
        assert!((inner(&a, &a) - 1.0).abs() < 1e-3);
        let b = Field2D::from_fn(g, |x, y| x * y + 0.3);
        assert!((inner(&a, &b) - inner(&b, &a)).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "grid mismatch")]
    fn inner_rejects_mismatch() {
        inner(&Field2D::zeros(sq(5)), &Field2D::zeros(sq(7)));
    }

    #[test]
    fn gradient_affine_exact() {
        let g = Grid2D::new(-1.0, 2.0, 0.0, 1.0, 13, 9).unwrap();
        let a = Field2D::from_fn(g, |x, y| x + y);
        let (gx, gy) = gradient(&a);
        for k in 0..g.len() {
            assert!((gx.values()[k] - 1.0).abs() < 1e-12);
            assert!((gy.values()[k] - 1.0).abs() < 1e-12);
        }
        let (cx, cy) = gradient(&Field2D::constant(g, 3.5));
        assert_eq!(cx.max_abs(), 0.0);
        assert_eq!(cy.max_abs(), 0.0);
    }

    #[test]
    fn gradient_second_order() {
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&n| {
                let g = sq(n);
                let a = Field2D::from_fn(g, |x, _| (PI * x).sin());
                let exact = Field2D::from_fn(g, |x, _| PI * (PI * x).cos());
                (&gradient(&a).0 - &exact).max_abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn boundary_ops() {
        let g = sq(6);
        let a = Field2D::from_fn(g, |x, y| x * x - y);
        let s = Field2D::from_fn(g, |x, y| 10.0 + x + 3.0 * y);
        assert_eq!(boundary_overwrite(&a, &a), a);
        let o = boundary_overwrite(&a, &s);
        assert_eq!(boundary_restrict(&o), boundary_restrict(&s));
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let expect = if g.is_boundary(i, j) { s.at(i, j) } else { a.at(i, j) };
                assert_eq!(o.at(i, j), expect);
            }
        }
        let m = g.boundary_mask();
        assert_eq!(m.count(), 4 * 6 - 4);
        assert_eq!(boundary_restrict(&a).values().len(), m.count());
    }

    #[test]
    fn boundary_values_extend() {
        let g = sq(5);
        let bv = BoundaryValues::from_fn(g, |x, y| x + y);
        let f = bv.extend_with(7.0);
        assert_eq!(f.at(2, 2), 7.0);
        assert_eq!(f.at(0, 3), g.x(0) + g.y(3));
    }

    #[test]
    fn energy_of_affine_field() {
        let g = sq(9);
        let a = Field2D::from_fn(g, |x, y| 2.0 * x - y);
        // |grad a|^2 = 5 over area 4
        assert!((dirichlet_energy(&a) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn face_gradients_of_affine_field() {
        let g = sq(7);
        let u = Field2D::from_fn(g, |x, y| 3.0 * x - 2.0 * y);
        let f = FaceGradients::from_differences(&u);
        assert!(f.dx.iter().all(|d| (d - 3.0).abs() < 1e-12));
        assert!(f.dy.iter().all(|d| (d + 2.0).abs() < 1e-12));
        assert_eq!(f.dx.len(), 6 * 7);
        assert_eq!(f.dy.len(), 7 * 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field(g: Grid2D) -> impl Strategy<Value = Field2D> {
            prop::collection::vec(-10.0f64..10.0, g.len())
                .prop_map(move |v| Field2D::from_values(g, v).unwrap())
        }

        proptest! {
            #[test]
            fn integrate_is_linear(a in field(sq(7)), b in field(sq(7)),
                                   al in -3.0f64..3.0, be in -3.0f64..3.0) {
                let mut c = a.scale(al);
                c.axpy(be, &b);
                let lhs = integrate(&c);
                let rhs = al * integrate(&a) + be * integrate(&b);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }

            #[test]
            fn inner_self_nonnegative(a in field(sq(6))) {
                prop_assert!(inner(&a, &a) >= 0.0);
            }

            #[test]
            fn overwrite_keeps_interior(a in field(sq(6)), s in field(sq(6))) {
                let o = boundary_overwrite(&a, &s);
                for (i, j) in sq(6).interior_nodes() {
                    prop_assert_eq!(o.at(i, j), a.at(i, j));
                }
            }
        }
    }
}
