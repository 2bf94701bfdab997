//! Minimum-complexity interpolation with random features.
//!
//! The finite-width problem
//!
//! ```text
//! minimize   sum_j rho(a_j)
//! subject to (1/N) sum_j a_j phi(x_i; w_j) = y_i   for all i <= n
//! ```
//!
//! is solved through its concave dual
//! `F_N(lambda) = <lambda, y> - (1/N) sum_j rho*(<phi_j, lambda>)`, whose gradient is
//! exactly the interpolation residual. Primal coefficients are recovered as
//! `a_j = s(<phi_j, lambda>)` with `s = (rho*)'`. The `rho(x) = |x|` case is handled
//! separately as a linear program.
//!
//! Modules:
//! - [`penalty`]: the penalty family, its conjugate and link function.
//! - [`featurize`]: weights, feature maps, data, kernel matrices and whitening.
//! - [`solver`]: damped Newton ascent on the dual and the l1 simplex solver.
//! - [`predict`]: predictors, Monte Carlo L2 distances and kernel interpolants.
//! - [`audit`]: empirical checks of the feature/penalty assumptions and the event budget.
//! - [`harness`]: experiment configs, runners and persistence used by the `mci` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod error;
pub mod featurize;
pub mod harness;
pub mod linalg;
pub mod penalty;
pub mod predict;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use featurize::{
    Activation, Covariates, DataSpec, FeatureSpec, Instance, KernelMethod, KernelOracle, Target,
    WeightDist,
};
pub use penalty::{PenaltyKind, PenaltySpec};
pub use predict::{KernelPredictor, McEstimate, Predictor};
pub use solver::{DualSolution, PrimalSolution, SolverOptions, Termination};
