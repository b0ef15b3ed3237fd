//! Surface fits through noisy grid data.

use nalgebra::{DMatrix, DVector};

use super::PipelineError;
use crate::grid::{FaceGradients, Field2D, Grid2D};
use crate::pde_solver::linalg::BandMatrix;

/// Exponents `(a, b)` of the 21 monomials `s^a t^b` with `a + b <= 5`.
pub fn poly5_exponents() -> Vec<(i32, i32)> {
    (0..=5).flat_map(|d| (0..=d).map(move |a| (a, d - a))).collect()
}

/// Least-squares fit of a total-degree-5 polynomial in coordinates scaled
/// to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Poly5Fit {
    grid: Grid2D,
    pub coefficients: Vec<f64>,
    /// Ratio of extreme singular values of the design matrix.
    pub condition: f64,
}

pub const POLY5_MAX_CONDITION: f64 = 1e10;

fn scaled(g: &Grid2D, i: usize, j: usize) -> (f64, f64) {
    let (x0, x1, y0, y1) = g.bounds();
    let s = (2.0 * g.x(i) - (x0 + x1)) / (x1 - x0);
    let t = (2.0 * g.y(j) - (y0 + y1)) / (y1 - y0);
    (s, t)
}

fn design(g: &Grid2D) -> DMatrix<f64> {
    let exps = poly5_exponents();
    DMatrix::from_fn(g.len(), exps.len(), |k, m| {
        let (i, j) = g.ij(k);
        let (s, t) = scaled(g, i, j);
        let (a, b) = exps[m];
        s.powi(a) * t.powi(b)
    })
}

impl Poly5Fit {
    pub fn fit(u: &Field2D) -> Result<Self, PipelineError> {
        let g = *u.grid();
        let n_terms = poly5_exponents().len();
        if g.len() < n_terms {
            return Err(PipelineError::IllConditioned {
                condition: f64::INFINITY,
                reason: format!("{} nodes cannot determine {n_terms} coefficients", g.len()),
            });
        }
        let a = design(&g);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= POLY5_MAX_CONDITION) {
            return Err(PipelineError::IllConditioned { condition, reason: "degree-5 design matrix".into() });
        }
        let b = DVector::from_column_slice(u.values());
        let x = svd
            .solve(&b, 0.0)
            .map_err(|e| PipelineError::IllConditioned { condition, reason: e.to_string() })?;
        Ok(Self { grid: g, coefficients: x.iter().copied().collect(), condition })
    }

    pub fn eval(&self) -> Field2D {
        let a = design(&self.grid);
        let v = a * DVector::from_column_slice(&self.coefficients);
        Field2D::from_values(self.grid, v.iter().copied().collect()).expect("finite fit")
    }

    /// Exact partial derivatives of the fitted polynomial at the nodes.
    pub fn derivatives(&self) -> (Field2D, Field2D) {
        let g = self.grid;
        let (x0, x1, y0, y1) = g.bounds();
        let (sx, sy) = (2.0 / (x1 - x0), 2.0 / (y1 - y0));
        let exps = poly5_exponents();
        let mut dx = Field2D::zeros(g);
        let mut dy = Field2D::zeros(g);
        for (i, j) in (0..g.ny()).flat_map(|j| (0..g.nx()).map(move |i| (i, j))) {
            let (s, t) = scaled(&g, i, j);
            let (mut ds, mut dt) = (0.0, 0.0);
            for (&(a, b), &c) in exps.iter().zip(&self.coefficients) {
                if a > 0 {
                    ds += c * a as f64 * s.powi(a - 1) * t.powi(b);
                }
                if b > 0 {
                    dt += c * b as f64 * s.powi(a) * t.powi(b - 1);
                }
            }
            dx.set(i, j, ds * sx);
            dy.set(i, j, dt * sy);
        }
        (dx, dy)
    }
}

/// The degree-5 least-squares surface evaluated on the grid.
pub fn smooth_poly5(u: &Field2D) -> Result<Field2D, PipelineError> {
    Poly5Fit::fit(u).map(|f| f.eval())
}

/// Node slopes of the not-a-knot cubic spline through uniform samples.
pub fn spline_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    assert!(n >= 3, "a spline needs at least 3 samples");
    // second derivatives M; a single parabola when n = 3
    let m = if n == 3 {
        vec![(y[2] - 2.0 * y[1] + y[0]) / (h * h); 3]
    } else {
        let mut a = BandMatrix::zeros(n, 2, 2);
        let mut rhs = vec![0.0; n];
        a.set(0, 0, 1.0);
        a.set(0, 1, -2.0);
        a.set(0, 2, 1.0);
        for i in 1..n - 1 {
            a.set(i, i - 1, 1.0);
            a.set(i, i, 4.0);
            a.set(i, i + 1, 1.0);
            rhs[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
        }
        a.set(n - 1, n - 3, 1.0);
        a.set(n - 1, n - 2, -2.0);
        a.set(n - 1, n - 1, 1.0);
        a.lu().expect("not-a-knot system is nonsingular").solve(&rhs)
    };
    let mut s = Vec::with_capacity(n);
    for i in 0..n - 1 {
        s.push((y[i + 1] - y[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0);
    }
    s.push((y[n - 1] - y[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0);
    s
}

/// Tensor-product not-a-knot cubic spline through every node. It reproduces
/// the data at the nodes; its partial derivatives there come from the row
/// and column splines.
#[derive(Debug, Clone)]
pub struct CubicSurface {
    pub values: Field2D,
    pub dx: Field2D,
    pub dy: Field2D,
}

impl CubicSurface {
    pub fn new(u: &Field2D) -> Self {
        let g = *u.grid();
        let (nx, ny) = (g.nx(), g.ny());
        let mut dx = Field2D::zeros(g);
        for j in 0..ny {
            let row: Vec<f64> = (0..nx).map(|i| u.at(i, j)).collect();
            for (i, s) in spline_slopes(&row, g.hx()).into_iter().enumerate() {
                dx.set(i, j, s);
            }
        }
        let mut dy = Field2D::zeros(g);
        for i in 0..nx {
            let col: Vec<f64> = (0..ny).map(|j| u.at(i, j)).collect();
            for (j, s) in spline_slopes(&col, g.hy()).into_iter().enumerate() {
                dy.set(i, j, s);
            }
        }
        Self { values: u.clone(), dx, dy }
    }

    /// Face derivatives as averages of the two node slopes. This damps the
    /// highest grid frequency completely, unlike plain differences.
    pub fn faces(&self) -> FaceGradients {
        FaceGradients::from_node_derivatives(&self.dx, &self.dy)
    }
}

pub fn smooth_cubic(u: &Field2D) -> CubicSurface {
    CubicSurface::new(u)
}
