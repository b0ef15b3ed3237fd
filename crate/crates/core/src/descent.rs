//! Block-coordinate descent on `(p, q, f)`.
//!
//! Each outer iteration updates `p`, then `q`, then `f`, every update with
//! its own line search on the selected functional and each starting from the
//! latest partial triple. The `p` direction always vanishes on the boundary,
//! so `p` keeps the boundary values it started with.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_pipeline::rel_l1_error;
use crate::functionals::{
    evaluate, gradient, CoefficientTriple, Component, Evaluation, Functional, FunctionalError,
    GradientTriple, ProblemInstance,
};
use crate::grid::{self, BoundaryValues, Field2D};
use crate::pde_solver::{solve_dirichlet, SolverConfig};
use crate::sobolev;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Backtracking from the previous accepted step.
    #[default]
    Backtracking,
    /// Minimizer of the quadratic through two function values and the slope,
    /// falling back to backtracking. Exact for `G_T`, which is quadratic
    /// along every line.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub functional: Functional,
    pub recover_p: bool,
    pub recover_q: bool,
    pub recover_f: bool,
    /// Smooth the `p`, `q`, `f` directions with `(I - lap)^{-1}`.
    pub neuberger_p: bool,
    pub neuberger_q: bool,
    pub neuberger_f: bool,
    pub line_search: LineSearch,
    pub initial_alpha: f64,
    pub shrink: f64,
    pub growth: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_iters: usize,
    /// Stop when `G` decreased by less than this fraction over `window` iterations.
    pub rel_tol: f64,
    pub window: usize,
    /// Lower bound imposed on `p` after every trial step.
    pub cutoff: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            functional: Functional::GT,
            recover_p: true,
            recover_q: false,
            recover_f: false,
            neuberger_p: true,
            neuberger_q: false,
            neuberger_f: false,
            line_search: LineSearch::Backtracking,
            initial_alpha: 1.0,
            shrink: 0.5,
            growth: 1.2,
            armijo: 1e-4,
            max_iters: 500,
            rel_tol: 1e-8,
            window: 10,
            cutoff: None,
            solver: SolverConfig::default(),
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |m: String| Err(DescentError::InvalidConfig(m));
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad(format!("growth must be >= 1, got {}", self.growth));
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad(format!("initial_alpha must be > 0, got {}", self.initial_alpha));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad(format!("armijo must lie in (0, 1), got {}", self.armijo));
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be >= 0, got {}", self.rel_tol));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if let Some(nu) = self.cutoff {
            if !nu.is_finite() {
                return bad("cutoff must be finite".into());
            }
        }
        if !(self.recover_p || self.recover_q || self.recover_f) {
            return bad("at least one component must be recovered".into());
        }
        self.solver.validate().map_err(|e| DescentError::InvalidConfig(e.to_string()))
    }

    fn active(&self, c: Component) -> bool {
        match c {
            Component::P => self.recover_p,
            Component::Q => self.recover_q,
            Component::F => self.recover_f,
        }
    }

    fn smoothed(&self, c: Component) -> bool {
        match c {
            Component::P => self.neuberger_p,
            Component::Q => self.neuberger_q,
            Component::F => self.neuberger_f,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescentError {
    #[error("invalid descent configuration: {0}")]
    InvalidConfig(String),
    #[error("line search stalled: every active component was frozen at iteration {iteration}")]
    LineSearchStalled { iteration: usize },
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Converged,
    Stalled,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::Converged => "converged",
            StopReason::Stalled => "stalled",
        }
    }
}

/// One row of the trace. Step sizes are 0 for skipped or frozen components;
/// errors are NaN without a (nonzero) ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub g: f64,
    pub alpha: [f64; 3],
    pub gnorm: [f64; 3],
    pub relerr: [f64; 3],
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DescentTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str =
    "iter,G,alpha_p,alpha_q,alpha_f,gnorm_p,gnorm_q,gnorm_f,relerr_p,relerr_q,relerr_f,seconds";

impl DescentTrace {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.g).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{:?}", r.iter, r.g);
            for v in r.alpha.iter().chain(&r.gnorm).chain(&r.relerr) {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(out, ",{:.6}", r.seconds);
        }
        out
    }

    /// Fraction of iterations whose relative decrease of `G` fell below `threshold`.
    pub fn stall_rate(&self, threshold: f64) -> f64 {
        let g = self.values();
        if g.len() < 2 {
            return 0.0;
        }
        let slow = g
            .windows(2)
            .filter(|w| (w[0] - w[1]) <= threshold * w[0].abs())
            .count();
        slow as f64 / (g.len() - 1) as f64
    }
}

pub fn project_cutoff(p: &Field2D, nu: f64) -> Field2D {
    p.map(|v| v.max(nu))
}

/// `(p0, 0, 0)` with `p0` the discrete harmonic extension of the boundary values.
pub fn initial_guess(p_boundary: &BoundaryValues, cfg: &SolverConfig) -> Result<CoefficientTriple, FunctionalError> {
    let g = *p_boundary.grid();
    let one = Field2D::constant(g, 1.0);
    let zero = Field2D::zeros(g);
    let p = solve_dirichlet(&one, &zero, 0.0, &zero, p_boundary, cfg)
        .map_err(|source| FunctionalError::Solver { lambda: 0.0, source })?;
    Ok(CoefficientTriple::p_only(grid::boundary_apply(&p, p_boundary)))
}

/// Descent state carried between outer iterations.
#[derive(Debug, Clone)]
pub struct Descent<'a> {
    inst: &'a ProblemInstance,
    cfg: DescentConfig,
    c: CoefficientTriple,
    eval: Evaluation,
    alpha: [f64; 3],
    iter: usize,
}

enum Trial {
    Accepted(CoefficientTriple, Evaluation, f64),
    Frozen,
}

impl<'a> Descent<'a> {
    pub fn new(c0: CoefficientTriple, inst: &'a ProblemInstance, cfg: DescentConfig) -> Result<Self, DescentError> {
        cfg.validate()?;
        if c0.grid() != inst.grid() {
            return Err(FunctionalError::Invalid("initial triple and data live on different grids".into()).into());
        }
        let eval = evaluate(inst, &c0, cfg.functional, None, &cfg.solver)?;
        let alpha = [cfg.initial_alpha; 3];
        Ok(Self { inst, cfg, c: c0, eval, alpha, iter: 0 })
    }

    pub fn current(&self) -> &CoefficientTriple {
        &self.c
    }

    pub fn value(&self) -> f64 {
        self.eval.value
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn relative_errors(&self) -> [f64; 3] {
        match &self.inst.truth {
            Some(t) => Component::ALL.map(|k| rel_l1_error(self.c.get(k), t.get(k)).unwrap_or(f64::NAN)),
            None => [f64::NAN; 3],
        }
    }

    fn direction(&self, comp: Component, g: &GradientTriple) -> Result<Field2D, DescentError> {
        let raw = g.get(comp);
        let d = if self.cfg.smoothed(comp) {
            sobolev::neuberger(raw, &self.cfg.solver)
                .map_err(|source| FunctionalError::Solver { lambda: f64::NAN, source })?
        } else if comp == Component::P {
            grid::zero_boundary(raw)
        } else {
            raw.clone()
        };
        Ok(d.scale(-1.0))
    }

    fn candidate(&self, comp: Component, d: &Field2D, alpha: f64) -> CoefficientTriple {
        let mut c = self.c.clone();
        let x = c.get_mut(comp);
        x.axpy(alpha, d);
        if comp == Component::P {
            if let Some(nu) = self.cfg.cutoff {
                *x = grid::boundary_apply(&project_cutoff(x, nu), &self.inst.p_boundary);
            }
        }
        c
    }

    fn try_eval(&self, c: &CoefficientTriple) -> Option<Evaluation> {
        match evaluate(self.inst, c, self.cfg.functional, Some(&self.eval), &self.cfg.solver) {
            Ok(e) if e.value.is_finite() => Some(e),
            _ => None,
        }
    }

    fn line_search(&self, comp: Component, d: &Field2D, slope: f64) -> Trial {
        let g0 = self.eval.value;
        let scale = 1.0 + self.c.get(comp).max_abs();
        let dmax = d.max_abs();
        let mut alpha = self.alpha[comp as usize] * self.cfg.growth;
        let accept = |a: f64, e: &Evaluation| e.value < g0 && e.value <= g0 + self.cfg.armijo * a * slope;
        if self.cfg.line_search == LineSearch::Quadratic {
            let c1 = self.candidate(comp, d, alpha);
            if let Some(e1) = self.try_eval(&c1) {
                let curv = (e1.value - g0 - alpha * slope) / (alpha * alpha);
                let best = if curv > 0.0 { -slope / (2.0 * curv) } else { alpha };
                if best.is_finite() && best > 0.0 && best != alpha {
                    let c2 = self.candidate(comp, d, best);
                    if let Some(e2) = self.try_eval(&c2) {
                        if accept(best, &e2) && (e2.value <= e1.value || !accept(alpha, &e1)) {
                            return Trial::Accepted(c2, e2, best);
                        }
                    }
                }
                if accept(alpha, &e1) {
                    return Trial::Accepted(c1, e1, alpha);
                }
                if curv > 0.0 {
                    alpha = alpha.min(-slope / (2.0 * curv));
                }
                alpha *= self.cfg.shrink;
            } else {
                alpha *= self.cfg.shrink;
            }
        }
        while alpha * dmax > 1e-15 * scale {
            let c = self.candidate(comp, d, alpha);
            if let Some(e) = self.try_eval(&c) {
                if accept(alpha, &e) {
                    return Trial::Accepted(c, e, alpha);
                }
            }
            alpha *= self.cfg.shrink;
        }
        Trial::Frozen
    }

    /// One outer iteration `p -> q -> f`. Returns the trace row, or
    /// [`DescentError::LineSearchStalled`] when no active component moved.
    pub fn step_block(&mut self, started: Instant) -> Result<TraceRow, DescentError> {
        self.iter += 1;
        let mut alpha_out = [0.0; 3];
        let mut gnorm = [f64::NAN; 3];
        let mut moved = false;
        let mut any_direction = false;
        for comp in Component::ALL {
            if !self.cfg.active(comp) {
                continue;
            }
            let g = gradient(self.inst, &self.c, &self.eval, &self.cfg.solver);
            let k = comp as usize;
            gnorm[k] = g.get(comp).l2_norm();
            let d = self.direction(comp, &g)?;
            let slope = grid::inner(g.get(comp), &d);
            if !(slope < 0.0) || d.max_abs() == 0.0 {
                continue;
            }
            any_direction = true;
            match self.line_search(comp, &d, slope) {
                Trial::Accepted(c, e, a) => {
                    self.c = c;
                    self.eval = e;
                    self.alpha[k] = a;
                    alpha_out[k] = a;
                    moved = true;
                }
                Trial::Frozen => {}
            }
        }
        let row = TraceRow {
            iter: self.iter,
            g: self.eval.value,
            alpha: alpha_out,
            gnorm,
            relerr: self.relative_errors(),
            seconds: started.elapsed().as_secs_f64(),
        };
        if !moved && any_direction {
            return Err(DescentError::LineSearchStalled { iteration: self.iter });
        }
        Ok(row)
    }
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub c: CoefficientTriple,
    pub trace: DescentTrace,
    pub stopped: StopReason,
}

/// Runs until the iteration cap, a relative decrease below `rel_tol` across
/// `window` iterations, or a stall. `observe` sees every trace row with its
/// iterate, starting with `c0` at iteration 0.
pub fn run_with(
    c0: CoefficientTriple,
    inst: &ProblemInstance,
    cfg: &DescentConfig,
    mut observe: impl FnMut(&TraceRow, &CoefficientTriple),
) -> Result<DescentResult, DescentError> {
    let started = Instant::now();
    let mut state = Descent::new(c0, inst, cfg.clone())?;
    let mut trace = DescentTrace::default();
    let row0 = TraceRow {
        iter: 0,
        g: state.value(),
        alpha: [0.0; 3],
        gnorm: [f64::NAN; 3],
        relerr: state.relative_errors(),
        seconds: started.elapsed().as_secs_f64(),
    };
    observe(&row0, state.current());
    trace.rows.push(row0);
    let mut stopped = StopReason::MaxIters;
    while state.iteration() < cfg.max_iters {
        match state.step_block(started) {
            Ok(row) => {
                observe(&row, state.current());
                trace.rows.push(row);
            }
            Err(DescentError::LineSearchStalled { .. }) => {
                stopped = StopReason::Stalled;
                break;
            }
            Err(e) => return Err(e),
        }
        let n = trace.rows.len();
        if n > cfg.window {
            let old = trace.rows[n - 1 - cfg.window].g;
            let new = trace.rows[n - 1].g;
            if old - new <= cfg.rel_tol * old.abs() {
                stopped = StopReason::Converged;
                break;
            }
        }
    }
    Ok(DescentResult { c: state.c, trace, stopped })
}

pub fn run(c0: CoefficientTriple, inst: &ProblemInstance, cfg: &DescentConfig) -> Result<DescentResult, DescentError> {
    run_with(c0, inst, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::Observation;
    use crate::grid::Grid2D;

    fn smooth_instance(n: usize) -> ProblemInstance {
        let g = Grid2D::unit_square(n).unwrap();
        let p = Field2D::from_fn(g, |x, y| 1.5 + 0.5 * (x * y).sin() + 0.3 * x);
        let truth = CoefficientTriple::p_only(p.clone());
        let phi = BoundaryValues::from_fn(g, |x, y| x + y + 4.0);
        let z = Field2D::zeros(g);
        let cfg = SolverConfig::default();
        let u = solve_dirichlet(&p, &z, 0.0, &z, &phi, &cfg).unwrap();
        ProblemInstance::new(vec![Observation::new(0.0, u)], grid::boundary_restrict(&p), Some(truth)).unwrap()
    }

    #[test]
    fn cutoff_projection() {
        let g = Grid2D::unit_square(5).unwrap();
        let z = Field2D::zeros(g);
        assert_eq!(project_cutoff(&z, 0.5), Field2D::constant(g, 0.5));
        let p = Field2D::from_fn(g, |x, y| x + y);
        let c = project_cutoff(&p, 0.5);
        for k in 0..g.len() {
            assert_eq!(c.values()[k], p.values()[k].max(0.5));
        }
        let high = Field2D::constant(g, 2.0);
        assert_eq!(project_cutoff(&high, 0.5), high);
    }

    #[test]
    fn config_validation() {
        assert!(DescentConfig::default().validate().is_ok());
        for bad in [
            DescentConfig { shrink: 1.0, ..Default::default() },
            DescentConfig { initial_alpha: 0.0, ..Default::default() },
            DescentConfig { growth: 0.5, ..Default::default() },
            DescentConfig { recover_p: false, ..Default::default() },
            DescentConfig { window: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let cfg: DescentConfig = serde_json::from_str(r#"{"functional":"G_lambda","cutoff":0.5}"#).unwrap();
        assert_eq!(cfg.functional, Functional::GLambda);
        assert_eq!(cfg.cutoff, Some(0.5));
        assert!(serde_json::from_str::<DescentConfig>(r#"{"nope":1}"#).is_err());
    }

    #[test]
    fn zero_iterations_returns_start() {
        let inst = smooth_instance(9);
        let c0 = initial_guess(&inst.p_boundary, &SolverConfig::default()).unwrap();
        let cfg = DescentConfig { max_iters: 0, ..Default::default() };
        let r = run(c0.clone(), &inst, &cfg).unwrap();
        assert_eq!(r.c, c0);
        assert_eq!(r.trace.rows.len(), 1);
        assert_eq!(r.stopped, StopReason::MaxIters);
    }

    #[test]
    fn start_at_truth_stays_put() {
        let inst = smooth_instance(9);
        let truth = inst.truth.clone().unwrap();
        let cfg = DescentConfig { max_iters: 5, ..Default::default() };
        let r = run(truth.clone(), &inst, &cfg).unwrap();
        let g = r.trace.values();
        assert!(g[0] < 1e-10 && g.iter().all(|&v| v <= g[0]));
        assert!((&r.c.p - &truth.p).max_abs() < 1e-6);
    }

    #[test]
    fn initial_guess_pins_boundary() {
        let inst = smooth_instance(9);
        let c0 = initial_guess(&inst.p_boundary, &SolverConfig::default()).unwrap();
        assert_eq!(grid::boundary_restrict(&c0.p), inst.p_boundary);
        assert_eq!(c0.q.max_abs(), 0.0);
    }

    #[test]
    fn descent_decreases_and_pins_boundary() {
        let inst = smooth_instance(17);
        let c0 = initial_guess(&inst.p_boundary, &SolverConfig::default()).unwrap();
        for functional in [Functional::GT, Functional::GLambda] {
            for line_search in [LineSearch::Backtracking, LineSearch::Quadratic] {
                let cfg = DescentConfig { functional, line_search, max_iters: 40, ..Default::default() };
                let mut pinned = true;
                let r = run_with(c0.clone(), &inst, &cfg, |_, c| {
                    pinned &= grid::boundary_restrict(&c.p) == inst.p_boundary;
                })
                .unwrap();
                assert!(pinned);
                let g = r.trace.values();
                assert!(g.windows(2).all(|w| w[1] <= w[0]), "{functional} {line_search:?}");
                assert!(g[g.len() - 1] < 0.5 * g[0]);
                let e = &r.trace.rows;
                assert!(e[e.len() - 1].relerr[0] < e[0].relerr[0]);
                assert!(e[0].relerr[1].is_nan());
            }
        }
    }

    #[test]
    fn cutoff_is_respected() {
        let inst = smooth_instance(13);
        let c0 = initial_guess(&inst.p_boundary, &SolverConfig::default()).unwrap();
        let cfg = DescentConfig { cutoff: Some(1.4), max_iters: 15, ..Default::default() };
        let mut lowest = f64::INFINITY;
        run_with(c0, &inst, &cfg, |row, c| {
            if row.iter > 0 {
                lowest = lowest.min(grid::zero_boundary(&c.p.map(|v| v - 1.4)).min());
            }
        })
        .unwrap();
        assert!(lowest >= 0.0);
    }

    #[test]
    fn deterministic_trace() {
        let inst = smooth_instance(13);
        let c0 = initial_guess(&inst.p_boundary, &SolverConfig::default()).unwrap();
        let cfg = DescentConfig { max_iters: 10, ..Default::default() };
        let a = run(c0.clone(), &inst, &cfg).unwrap();
        let b = run(c0, &inst, &cfg).unwrap();
        assert_eq!(a.c, b.c);
        let strip = |t: &DescentTrace| {
            t.rows
                .iter()
                .flat_map(|r| [r.g].into_iter().chain(r.alpha).chain(r.gnorm).chain(r.relerr))
                .map(f64::to_bits)
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.trace), strip(&b.trace));
    }

    #[test]
    fn trace_csv_layout() {
        let t = DescentTrace {
            rows: vec![TraceRow { iter: 0, g: 1.5, alpha: [0.0; 3], gnorm: [f64::NAN; 3], relerr: [0.25, f64::NAN, f64::NAN], seconds: 0.0 }],
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1].split(',').count(), 12);
        assert!(lines[1].starts_with("0,1.5,0.0,0.0,0.0,NaN"));
    }

    #[test]
    fn stall_rate_counts_flat_steps() {
        let mk = |g: &[f64]| DescentTrace {
            rows: g
                .iter()
                .enumerate()
                .map(|(i, &g)| TraceRow { iter: i, g, alpha: [0.0; 3], gnorm: [0.0; 3], relerr: [0.0; 3], seconds: 0.0 })
                .collect(),
        };
        assert_eq!(mk(&[4.0, 2.0, 1.0]).stall_rate(1e-3), 0.0);
        assert_eq!(mk(&[4.0, 2.0, 2.0, 2.0, 1.0]).stall_rate(1e-3), 0.5);
    }
}
