//! Measured statistics of the deterministic error bound that compares a
//! finite-width solution with a wide reference solution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{cross_kernel, DataSpec, FeatureSpec, Instance, KernelOracle};
use crate::linalg;
use crate::penalty::PenaltySpec;
use crate::predict::predict_many;
use crate::rng::{self, label};
use crate::solver::{dual_gradient, dual_hessian, DualSolution};

/// A solved finite-width model: weights, training features and dual solution.
#[derive(Clone, Copy, Debug)]
pub struct SolvedModel<'a> {
    pub w: &'a DMatrix<f64>,
    pub phi: &'a DMatrix<f64>,
    pub sol: &'a DualSolution,
}

/// Stand-in for the infinite-width model.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// A much wider solve of the same problem.
    Wide(SolvedModel<'a>),
    /// Exact kernel predictor `k(x, X) lambda` with `lambda_hat = K^{-1} y`; `p = 2` only.
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventGrid {
    /// Points on the segment from the finite to the reference maximizer.
    pub segment: usize,
    /// Random points with `||lambda - lambda_hat||_K <= ||lambda_hat||_K / 2`.
    pub perturbations: usize,
}

impl Default for EventGrid {
    fn default() -> Self {
        Self { segment: 16, perturbations: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventBudget {
    pub eps1: f64,
    pub eps2: f64,
    pub beta: f64,
    #[serde(rename = "K_cont")]
    pub k_cont: f64,
    /// `s(||lambda_hat||_K)`.
    pub s_norm: f64,
    /// `(eps1 + 2 K eps2 / beta) s_norm`; infinite (null in JSON) when `beta <= 0`.
    #[serde(with = "super::nonfinite")]
    pub bound_rhs: f64,
    pub lhs: f64,
    pub holds: bool,
    /// Whether `eps2 / beta <= 1/4`, the hypothesis under which the bound is guaranteed.
    pub hypothesis_met: bool,
    pub grid_size: usize,
}

fn rms(a: &DMatrix<f64>, ca: usize, b: &DMatrix<f64>, cb: usize) -> f64 {
    let m = a.nrows() as f64;
    (a.column(ca) - b.column(cb)).norm() / m.sqrt()
}

fn coefficient_matrix(phi: &DMatrix<f64>, pen: &PenaltySpec, lambdas: &[DVector<f64>]) -> DMatrix<f64> {
    let u = phi.tr_mul(&DMatrix::from_columns(lambdas));
    u.map(|v| pen.link_unchecked(v))
}

fn require_converged(sol: &DualSolution) -> Result<()> {
    if sol.converged {
        Ok(())
    } else {
        Err(Error::NotConverged { grad_norm: sol.grad_norm })
    }
}

/// Evaluate the bound statistics for `finite` against `reference`.
///
/// Suprema over inputs and over dual parameters are replaced by maxima over
/// `m` Monte Carlo test points and over a finite grid, so `eps1` and `K_cont`
/// are lower bounds on the quantities they estimate and `beta` an upper bound.
#[allow(clippy::too_many_arguments)]
pub fn event_audit(
    inst: &Instance,
    pen: &PenaltySpec,
    spec: &FeatureSpec,
    finite: SolvedModel<'_>,
    reference: Reference<'_>,
    oracle: &KernelOracle,
    ds: &DataSpec,
    m: usize,
    grid: EventGrid,
    seed: u64,
) -> Result<EventBudget> {
    pen.require_smooth()?;
    require_converged(finite.sol)?;
    if oracle.n() != inst.n() {
        return Err(Error::DimMismatch(format!("kernel is {0}x{0}, n = {1}", oracle.n(), inst.n())));
    }
    if m < 100 {
        return Err(Error::InvalidM(m));
    }
    let lam_hat = match reference {
        Reference::Wide(r) => {
            require_converged(r.sol)?;
            r.sol.lambda_hat.clone()
        }
        Reference::Kernel => {
            if pen.p() != Some(2.0) {
                return Err(Error::IncompatibleMethod {
                    method: "kernel reference",
                    reason: "the kernel predictor is the infinite-width limit only for p = 2".into(),
                });
            }
            oracle.k.clone().cholesky().ok_or(Error::SingularKernel)?.solve(&inst.y)
        }
    };
    let lam_n = &finite.sol.lambda_hat;
    let norm_hat = oracle.norm(&lam_hat);
    if !(norm_hat > 0.0) {
        return Err(Error::ReferenceFailed("reference dual parameter has zero K-norm".into()));
    }
    let s_norm = pen.link_unchecked(norm_hat);

    // Index 0 is lambda_hat and index 1 is lambda_hat_N; both are always evaluated.
    let mut points = vec![lam_hat.clone(), lam_n.clone()];
    let seg = grid.segment.max(2);
    for k in 0..seg {
        let t = k as f64 / (seg - 1) as f64;
        points.push(&lam_hat + (lam_n - &lam_hat) * t);
    }
    let mut r = rng::stream(seed, &[label::GRID]);
    for _ in 0..grid.perturbations {
        let mut dir: DVector<f64> = DVector::from_fn(inst.n(), |_, _| r.sample(StandardNormal));
        dir = &oracle.inv_sqrt * dir;
        let dn = oracle.norm(&dir);
        if dn > 0.0 {
            let radius = r.random::<f64>() * 0.5 * norm_hat;
            points.push(&lam_hat + dir * (radius / dn));
        }
    }
    let in_grid: Vec<usize> = (0..points.len())
        .filter(|&g| {
            let ratio = oracle.norm(&points[g]) / norm_hat;
            (0.5..=2.0).contains(&ratio)
        })
        .collect();
    if in_grid.is_empty() {
        return Err(Error::GridEmpty);
    }

    let x_test = ds.sample_covariates(m, rng::derive(seed, &[label::TEST]));
    let fin_pred = predict_many(spec, finite.w, &coefficient_matrix(finite.phi, pen, &points), &x_test)?;
    let ref_pred = match reference {
        Reference::Wide(r) => predict_many(spec, r.w, &coefficient_matrix(r.phi, pen, &points), &x_test)?,
        Reference::Kernel => cross_kernel(oracle, spec, &x_test, &inst.x)? * DMatrix::from_columns(&points),
    };

    let grad = dual_gradient(finite.phi, &inst.y, pen, &lam_hat)?;
    let eps2 = oracle.inv_norm(&grad) / s_norm;

    let mut eps1 = 0.0f64;
    let mut k_cont = 0.0f64;
    let mut curv = f64::INFINITY;
    for &g in &in_grid {
        eps1 = eps1.max(rms(&fin_pred, g, &ref_pred, g) / s_norm);
        let dist = oracle.norm(&(&points[g] - &lam_hat)) / norm_hat;
        if dist > 1e-12 {
            k_cont = k_cont.max(rms(&ref_pred, g, &ref_pred, 0) / s_norm / dist);
        }
        let neg_h = -dual_hessian(finite.phi, &inst.y, pen, &points[g])?;
        let mut white = &oracle.inv_sqrt * neg_h * &oracle.inv_sqrt;
        linalg::symmetrize(&mut white);
        curv = curv.min(linalg::lambda_min(&white));
    }
    let beta = curv * norm_hat / s_norm;
    let lhs = rms(&fin_pred, 1, &ref_pred, 0);
    let bound_rhs = if beta > 0.0 { (eps1 + 2.0 * k_cont * eps2 / beta) * s_norm } else { f64::INFINITY };
    Ok(EventBudget {
        eps1,
        eps2,
        beta,
        k_cont,
        s_norm,
        bound_rhs,
        lhs,
        holds: lhs <= bound_rhs,
        hypothesis_met: beta > 0.0 && eps2 / beta <= 0.25,
        grid_size: in_grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{featurize, kernel_matrix, sample_data, sample_weights, Activation, KernelMethod};
    use crate::solver::{solve_dual, SolverOptions};

    struct Setup {
        inst: Instance,
        ds: DataSpec,
        spec: FeatureSpec,
        oracle: KernelOracle,
    }

    fn setup(n: usize, d: usize) -> Setup {
        let ds = DataSpec::ridge(d, Activation::Relu);
        let inst = sample_data(&ds, n, 1).unwrap();
        let spec = FeatureSpec::relu();
        let oracle = kernel_matrix(&spec, &inst.x, KernelMethod::ArcCosineClosedForm, 0).unwrap();
        Setup { inst, ds, spec, oracle }
    }

    fn solve(s: &Setup, pen: &PenaltySpec, nf: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DualSolution) {
        let w = sample_weights(&s.spec, s.inst.d(), nf, seed).unwrap();
        let phi = featurize(&s.spec, &s.inst.x, &w, seed).unwrap();
        let sol = solve_dual(&phi, &s.inst.y, pen, &SolverOptions::default(), None).unwrap();
        (w, phi, sol)
    }

    #[test]
    fn identical_models_give_zero_lhs() {
        let s = setup(10, 4);
        let pen = PenaltySpec::pnorm(1.5).unwrap();
        let (w, phi, sol) = solve(&s, &pen, 200, 3);
        let model = SolvedModel { w: &w, phi: &phi, sol: &sol };
        let b = event_audit(&s.inst, &pen, &s.spec, model, Reference::Wide(model), &s.oracle, &s.ds, 500, EventGrid::default(), 1)
            .unwrap();
        assert_eq!(b.lhs, 0.0);
        assert_eq!(b.eps1, 0.0);
        assert!(b.eps2 < 1e-6);
        assert!(b.holds);
        let json = serde_json::to_value(&b).unwrap();
        assert!(json.get("K_cont").is_some());
    }

    #[test]
    fn quadratic_beta_is_whitened_covariance_spectrum() {
        let s = setup(20, 5);
        let pen = PenaltySpec::pnorm(2.0).unwrap();
        let (w, phi, sol) = solve(&s, &pen, 256, 5);
        let model = SolvedModel { w: &w, phi: &phi, sol: &sol };
        let b = event_audit(&s.inst, &pen, &s.spec, model, Reference::Kernel, &s.oracle, &s.ds, 2000, EventGrid::default(), 2)
            .unwrap();
        let mut white = &s.oracle.inv_sqrt * (&phi * phi.transpose() / 256.0) * &s.oracle.inv_sqrt;
        linalg::symmetrize(&mut white);
        assert!((b.beta - linalg::lambda_min(&white)).abs() <= 1e-10 * b.beta.abs().max(1.0));
        assert!((b.s_norm - s.oracle.norm(&(s.oracle.k.clone().cholesky().unwrap().solve(&s.inst.y)))).abs() < 1e-12);
        assert!(b.beta > 0.0 && b.grid_size >= 17);
        if b.hypothesis_met {
            assert!(b.holds, "{b:?}");
        }
    }

    #[test]
    fn rejects_unconverged_and_kernel_for_other_p() {
        let s = setup(10, 4);
        let pen = PenaltySpec::pnorm(1.5).unwrap();
        let (w, phi, mut sol) = solve(&s, &pen, 100, 3);
        let model = SolvedModel { w: &w, phi: &phi, sol: &sol };
        let r = event_audit(&s.inst, &pen, &s.spec, model, Reference::Kernel, &s.oracle, &s.ds, 500, EventGrid::default(), 1);
        assert!(matches!(r, Err(Error::IncompatibleMethod { .. })));
        sol.converged = false;
        let model = SolvedModel { w: &w, phi: &phi, sol: &sol };
        let r = event_audit(&s.inst, &pen, &s.spec, model, Reference::Wide(model), &s.oracle, &s.ds, 500, EventGrid::default(), 1);
        assert!(matches!(r, Err(Error::NotConverged { .. })));
    }
}
