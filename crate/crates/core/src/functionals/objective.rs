//! Sums of per-lambda functionals, `G = sum_lambda G_lambda` or `sum_lambda
//! G_T`, evaluated in observation order so results are reproducible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{energy, residual, CoefficientTriple, FunctionalError, GradientTriple, ProblemInstance};
use crate::grid::Field2D;
use crate::pde_solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Functional {
    #[serde(rename = "G_lambda")]
    GLambda,
    #[default]
    #[serde(rename = "G_T")]
    GT,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::GLambda => "G_lambda",
            Functional::GT => "G_T",
        })
    }
}

impl FromStr for Functional {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "G_lambda" | "g_lambda" => Ok(Functional::GLambda),
            "G_T" | "g_t" => Ok(Functional::GT),
            _ => Err(format!("unknown functional {s:?} (expected G_lambda or G_T)")),
        }
    }
}

#[derive(Debug, Clone)]
enum State {
    Energy(Field2D),
    Residual(residual::GtEval),
}

/// A value of the summed functional at one coefficient triple, keeping the
/// per-lambda intermediates needed for its gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub functional: Functional,
    pub value: f64,
    pub per_lambda: Vec<f64>,
    states: Vec<State>,
}

impl Evaluation {
    /// `u_{lambda,c}` per observation, when the functional needed them.
    pub fn forward_fields(&self) -> Option<Vec<&Field2D>> {
        self.states
            .iter()
            .map(|s| match s {
                State::Energy(u) => Some(u),
                State::Residual(_) => None,
            })
            .collect()
    }

    /// Largest relative gap `| ||grad v||^2 - <T, v> |` over the residual terms.
    pub fn green_defect(&self) -> f64 {
        self.states
            .iter()
            .filter_map(|s| match s {
                State::Residual(ev) => {
                    let (a, b) = ev.green_pair();
                    Some((a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
                }
                State::Energy(_) => None,
            })
            .fold(0.0, f64::max)
    }
}

/// Evaluates the summed functional. `warm` (an earlier evaluation of the same
/// functional) supplies initial guesses for the forward solves.
pub fn evaluate(
    inst: &ProblemInstance,
    c: &CoefficientTriple,
    which: Functional,
    warm: Option<&Evaluation>,
    cfg: &SolverConfig,
) -> Result<Evaluation, FunctionalError> {
    let mut per_lambda = Vec::with_capacity(inst.observations.len());
    let mut states = Vec::with_capacity(inst.observations.len());
    for (n, obs) in inst.observations.iter().enumerate() {
        match which {
            Functional::GLambda => {
                let guess = warm.and_then(|w| match w.states.get(n) {
                    Some(State::Energy(u)) => Some(u),
                    _ => None,
                });
                let uc = energy::forward_solution(obs, c, guess, cfg)?;
                per_lambda.push(energy::value_from(obs, c, &uc, cfg.face_average));
                states.push(State::Energy(uc));
            }
            Functional::GT => {
                let ev = residual::eval_g_t(obs, c, cfg)?;
                per_lambda.push(ev.value);
                states.push(State::Residual(ev));
            }
        }
    }
    let value = per_lambda.iter().sum();
    Ok(Evaluation { functional: which, value, per_lambda, states })
}

/// Gradient of the summed functional at the point `ev` was evaluated at.
pub fn gradient(inst: &ProblemInstance, c: &CoefficientTriple, ev: &Evaluation, cfg: &SolverConfig) -> GradientTriple {
    let mut total = GradientTriple::zeros(*c.grid());
    for (obs, st) in inst.observations.iter().zip(&ev.states) {
        let g = match st {
            State::Energy(uc) => energy::gradient_from(obs, c, uc, cfg.face_average),
            State::Residual(r) => residual::gradient_from(obs, c, r, cfg.face_average),
        };
        total.add_assign(&g);
    }
    total
}

pub fn eval_total(
    inst: &ProblemInstance,
    c: &CoefficientTriple,
    which: Functional,
    cfg: &SolverConfig,
) -> Result<f64, FunctionalError> {
    evaluate(inst, c, which, None, cfg).map(|e| e.value)
}

pub fn grad_total(
    inst: &ProblemInstance,
    c: &CoefficientTriple,
    which: Functional,
    cfg: &SolverConfig,
) -> Result<GradientTriple, FunctionalError> {
    let ev = evaluate(inst, c, which, None, cfg)?;
    Ok(gradient(inst, c, &ev, cfg))
}
