//! Finite-width interpolation solvers.
//!
//! [`solve_dual`] maximizes the concave dual `F_N` by damped Newton ascent and
//! [`primal_from_dual`] maps the maximizer back to coefficients `a_j = s(<phi_j, lambda>)`.
//! [`solve_l1`] handles `rho(x) = |x|` as a linear program.

mod dual;
mod simplex;

pub use dual::{dual_gradient, dual_hessian, dual_objective, primal_from_dual, solve_dual};
pub use simplex::{solve_l1, LpOptions};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol_grad_rel: f64,
    pub tol_grad_abs: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Ridge added to the negated Hessian, relative to its largest eigenvalue.
    pub hessian_ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad_rel: 1e-8,
            tol_grad_abs: 1e-10,
            max_iters: 500,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 50,
            hessian_ridge: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_grad_rel, self.tol_grad_abs, self.armijo_c1, self.hessian_ridge]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iters == 0 || self.max_backtracks == 0 {
            return Err(Error::Config("solver options must be positive".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config("backtrack_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Gradient-norm threshold for an instance with responses `y`.
    pub fn grad_tolerance(&self, y: &DVector<f64>) -> f64 {
        self.tol_grad_abs + self.tol_grad_rel * y.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxItersExceeded,
    /// No step satisfied the line search; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_hat: DVector<f64>,
    pub grad_norm: f64,
    pub objective: f64,
    pub iters: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub termination: Termination,
    /// Iterations where the Newton system could not be factored and a gradient
    /// step was taken instead.
    pub gradient_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub a: DVector<f64>,
    /// `sum_j rho(a_j)`.
    pub objective_primal: f64,
    /// `||(1/N) Phi a - y||_2`.
    pub residual: f64,
    /// False when recovered from a dual solve that did not converge.
    pub converged: bool,
    /// Newton iterations of the dual solve, or simplex pivots.
    pub iters: usize,
}

impl PrimalSolution {
    /// `(1/N) sum_j rho(a_j)`, the primal value matching the normalization of `F_N`.
    pub fn objective_per_feature(&self) -> f64 {
        self.objective_primal / self.a.len() as f64
    }
}
