use nalgebra::{DMatrix, DVector};

use super::{DualSolution, PrimalSolution, SolverOptions, Termination, TraceEntry};
use crate::error::{Error, Result};
use crate::linalg;
use crate::penalty::{PenaltyKind, PenaltySpec};

fn check(phi: &DMatrix<f64>, y: &DVector<f64>, pen: &PenaltySpec, lambda: Option<&DVector<f64>>) -> Result<()> {
    pen.require_smooth()?;
    if phi.nrows() != y.len() {
        return Err(Error::DimMismatch(format!("Phi has {} rows, y has {}", phi.nrows(), y.len())));
    }
    if phi.ncols() == 0 {
        return Err(Error::InvalidDim("Phi has no columns".into()));
    }
    if let Some(l) = lambda {
        if l.len() != y.len() {
            return Err(Error::DimMismatch(format!("lambda has {} entries, n = {}", l.len(), y.len())));
        }
    }
    if y.iter().chain(phi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Phi or y"));
    }
    Ok(())
}

/// Dual objective and derivatives sharing the projections `u = Phi^T lambda`.
struct DualProblem<'a> {
    phi: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    pen: &'a PenaltySpec,
}

impl DualProblem<'_> {
    fn n_features(&self) -> f64 {
        self.phi.ncols() as f64
    }

    fn project(&self, lambda: &DVector<f64>) -> DVector<f64> {
        self.phi.tr_mul(lambda)
    }

    fn objective_at(&self, lambda: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let conj: f64 = u.iter().map(|&v| self.pen.conjugate_unchecked(v)).sum();
        lambda.dot(self.y) - conj / self.n_features()
    }

    fn gradient_at(&self, u: &DVector<f64>) -> DVector<f64> {
        let s = u.map(|v| self.pen.link_unchecked(v));
        self.y - (self.phi * s) / self.n_features()
    }

    /// `-Hessian = (1/N) Phi diag(s'(u)) Phi^T`, returned positive semidefinite.
    fn neg_hessian_at(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.phi.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.pen.link_prime_unchecked(u[j]).max(0.0).sqrt();
        }
        let mut h = &scaled * scaled.transpose() / self.n_features();
        linalg::symmetrize(&mut h);
        h
    }

    fn objective(&self, lambda: &DVector<f64>) -> f64 {
        self.objective_at(lambda, &self.project(lambda))
    }
}

/// `F_N(lambda) = <lambda, y> - (1/N) sum_j rho*(<phi_j, lambda>)`.
pub fn dual_objective(phi: &DMatrix<f64>, y: &DVector<f64>, pen: &PenaltySpec, lambda: &DVector<f64>) -> Result<f64> {
    check(phi, y, pen, Some(lambda))?;
    Ok(DualProblem { phi, y, pen }.objective(lambda))
}

/// `grad F_N(lambda) = y - (1/N) sum_j phi_j s(<phi_j, lambda>)`, the interpolation residual.
pub fn dual_gradient(phi: &DMatrix<f64>, y: &DVector<f64>, pen: &PenaltySpec, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    check(phi, y, pen, Some(lambda))?;
    let p = DualProblem { phi, y, pen };
    Ok(p.gradient_at(&p.project(lambda)))
}

/// `hess F_N(lambda) = -(1/N) sum_j s'(<phi_j, lambda>) phi_j phi_j^T`.
pub fn dual_hessian(phi: &DMatrix<f64>, y: &DVector<f64>, pen: &PenaltySpec, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    check(phi, y, pen, Some(lambda))?;
    let p = DualProblem { phi, y, pen };
    Ok(-p.neg_hessian_at(&p.project(lambda)))
}

/// Starting point: the `p = 2` solution, rescaled by the maximizer of `c -> F_N(c lambda0)`.
const REFINE_STEPS: usize = 4;
const OBJECTIVE_RESOLUTION: f64 = 1e3;

fn initial_point(p: &DualProblem<'_>) -> DVector<f64> {
    let n = p.y.len();
    let mut gram = p.phi * p.phi.transpose() / p.n_features();
    linalg::symmetrize(&mut gram);
    let ridge = 1e-10 * gram.trace() / n as f64;
    let ridge = ridge.max(f64::MIN_POSITIVE);
    let mut lambda0 = match linalg::spd_solve(&gram, p.y, ridge) {
        Some(l) if l.iter().all(|v| v.is_finite()) => l,
        _ => return DVector::zeros(n),
    };
    // Iterative refinement removes the ridge bias on well-posed Gram matrices.
    for _ in 0..REFINE_STEPS {
        let r = p.y - &gram * &lambda0;
        match linalg::spd_solve(&gram, &r, ridge) {
            Some(dl) if dl.iter().all(|v| v.is_finite()) => lambda0 += dl,
            _ => break,
        }
    }
    let u = p.project(&lambda0);
    let a = lambda0.dot(p.y);
    let scale = match &p.pen.kind {
        PenaltyKind::PNorm { p: pp } => {
            // F(c l0) = c A - c^Q B
            let q = pp / (pp - 1.0);
            let b: f64 = u.iter().map(|v| v.abs().powf(q) / q).sum::<f64>() / p.n_features();
            if a > 0.0 && b > 0.0 {
                (a / (q * b)).powf(1.0 / (q - 1.0))
            } else {
                1.0
            }
        }
        PenaltyKind::Custom(_) => line_maximize(|c| p.objective(&(&lambda0 * c))),
    };
    if scale.is_finite() && scale > 0.0 {
        lambda0 * scale
    } else {
        lambda0
    }
}

/// Maximize a unimodal scalar function on `c > 0`: coarse scan over powers of
/// two, then golden-section refinement in the best bracket.
fn line_maximize(f: impl Fn(f64) -> f64) -> f64 {
    let grid: Vec<f64> = (-40..=40).map(|k| 2f64.powi(k)).collect();
    let vals: Vec<f64> = grid.iter().map(|&c| f(c)).collect();
    let best = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(40);
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c1 = hi - g * (hi - lo);
        let c2 = lo + g * (hi - lo);
        if f(c1) >= f(c2) {
            hi = c2;
        } else {
            lo = c1;
        }
    }
    0.5 * (lo + hi)
}

/// Maximize `F_N` by damped Newton ascent with Armijo backtracking.
///
/// The direction solves `(-hess F_N + r I) d = grad F_N` with `r = hessian_ridge *
/// lambda_max`. If that system cannot be factored a gradient step is taken for
/// the iteration. When the objective change drops below floating-point
/// resolution the step is accepted on a decrease of the gradient norm instead.
pub fn solve_dual(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    pen: &PenaltySpec,
    opts: &SolverOptions,
    init: Option<&DVector<f64>>,
) -> Result<DualSolution> {
    check(phi, y, pen, init)?;
    opts.validate()?;
    let prob = DualProblem { phi, y, pen };
    let tol = opts.grad_tolerance(y);

    let mut lambda = match init {
        Some(l) => l.clone(),
        None => initial_point(&prob),
    };
    let mut u = prob.project(&lambda);
    let mut f = prob.objective_at(&lambda, &u);
    let mut grad = prob.gradient_at(&u);
    let mut gnorm = grad.norm();
    let mut trace = vec![TraceEntry { iter: 0, objective: f, grad_norm: gnorm, step_size: 0.0 }];
    let mut best = (lambda.clone(), f, gnorm);
    let mut fallbacks = 0;
    let mut termination = Termination::MaxItersExceeded;
    let mut iters = 0;

    for it in 1..=opts.max_iters {
        if gnorm <= tol {
            termination = Termination::Converged;
            break;
        }
        iters = it;
        let neg_h = prob.neg_hessian_at(&u);
        let lmax = neg_h.trace().max(0.0);
        let ridge = (opts.hessian_ridge * lmax).max(f64::MIN_POSITIVE);
        let dir = match linalg::spd_solve(&neg_h, &grad, ridge) {
            Some(d) if d.iter().all(|v| v.is_finite()) && d.dot(&grad) > 0.0 => d,
            _ => {
                fallbacks += 1;
                let curv = grad.dot(&(&neg_h * &grad));
                let t = if curv > 0.0 { grad.norm_squared() / curv } else { 1.0 };
                &grad * t
            }
        };
        let slope = grad.dot(&dir);
        // Below this expected ascent the objective is dominated by rounding, and
        // Armijo would accept vanishing steps on ties.
        let unresolved = 0.5 * slope <= OBJECTIVE_RESOLUTION * f64::EPSILON * (1.0 + f.abs());
        let mut t = 1.0;
        let mut accepted = None;
        let armijo_tries = if unresolved { 0 } else { opts.max_backtracks + 1 };
        for _ in 0..armijo_tries {
            let cand = &lambda + &dir * t;
            let cu = prob.project(&cand);
            let cf = prob.objective_at(&cand, &cu);
            if cf.is_finite() && cf >= f + opts.armijo_c1 * t * slope {
                accepted = Some((cand, cu, cf));
                break;
            }
            t *= opts.backtrack_factor;
        }
        if accepted.is_none() && (unresolved || opts.armijo_c1 * slope <= 64.0 * f64::EPSILON * (1.0 + f.abs())) {
            // The objective cannot resolve the remaining ascent; fall back on the
            // gradient norm, which is the quantity we converge on.
            t = 1.0;
            for _ in 0..=opts.max_backtracks {
                let cand = &lambda + &dir * t;
                let cu = prob.project(&cand);
                let cg = prob.gradient_at(&cu).norm();
                if cg < gnorm {
                    let cf = prob.objective_at(&cand, &cu);
                    accepted = Some((cand, cu, cf));
                    break;
                }
                t *= opts.backtrack_factor;
            }
        }
        let Some((cand, cu, cf)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        lambda = cand;
        u = cu;
        f = cf;
        grad = prob.gradient_at(&u);
        gnorm = grad.norm();
        trace.push(TraceEntry { iter: it, objective: f, grad_norm: gnorm, step_size: t });
        if gnorm < best.2 {
            best = (lambda.clone(), f, gnorm);
        }
    }
    if gnorm <= tol {
        termination = Termination::Converged;
    }
    let converged = termination == Termination::Converged;
    let (lambda_hat, objective, grad_norm) = if converged { (lambda, f, gnorm) } else { best };
    Ok(DualSolution {
        lambda_hat,
        grad_norm,
        objective,
        iters,
        trace,
        converged,
        termination,
        gradient_fallbacks: fallbacks,
    })
}

/// Primal coefficients `a_j = s(<phi_j, lambda_hat>)`.
///
/// The residual equals the dual gradient norm by construction. A non-converged
/// solution still yields coefficients, flagged through `converged = false`.
pub fn primal_from_dual(phi: &DMatrix<f64>, pen: &PenaltySpec, sol: &DualSolution) -> Result<PrimalSolution> {
    pen.require_smooth()?;
    if phi.nrows() != sol.lambda_hat.len() {
        return Err(Error::DimMismatch(format!(
            "Phi has {} rows, lambda has {}",
            phi.nrows(),
            sol.lambda_hat.len()
        )));
    }
    let u = phi.tr_mul(&sol.lambda_hat);
    let a = u.map(|v| pen.link_unchecked(v));
    let objective_primal = u
        .iter()
        .zip(a.iter())
        .map(|(&uj, &aj)| match pen.penalty(aj) {
            Some(r) => r,
            None => uj * aj - pen.conjugate_unchecked(uj),
        })
        .sum();
    Ok(PrimalSolution { a, objective_primal, residual: sol.grad_norm, converged: sol.converged, iters: sol.iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{featurize, sample_data, sample_weights, Activation, DataSpec, FeatureSpec};

    fn pn(p: f64) -> PenaltySpec {
        PenaltySpec::pnorm(p).unwrap()
    }

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    fn random_problem(n: usize, nf: usize, d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let ds = DataSpec::ridge(d, Activation::Relu);
        let inst = sample_data(&ds, n, seed).unwrap();
        let spec = FeatureSpec::relu();
        let w = sample_weights(&spec, d, nf, seed + 1).unwrap();
        (featurize(&spec, &inst.x, &w, seed + 2).unwrap(), inst.y)
    }

    #[test]
    fn objective_examples() {
        let y = DVector::from_vec(vec![1.0]);
        let z = DVector::zeros(1);
        assert_eq!(dual_objective(&row(&[1.0]), &y, &pn(2.0), &z).unwrap(), 0.0);
        let one = DVector::from_vec(vec![1.0]);
        assert_eq!(dual_objective(&row(&[1.0]), &y, &pn(2.0), &one).unwrap(), 0.5);
        // 0.4 * 2 - (1/2)(0.4^2/2 + 1.2^2/2) = 0.8 - 0.4
        let y2 = DVector::from_vec(vec![2.0]);
        let l = DVector::from_vec(vec![0.4]);
        let v = dual_objective(&row(&[1.0, 3.0]), &y2, &pn(2.0), &l).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert!(matches!(dual_objective(&row(&[1.0]), &y, &PenaltySpec::l1(), &z), Err(Error::UndefinedForL1)));
        assert!(matches!(
            dual_objective(&row(&[1.0]), &y, &pn(2.0), &DVector::zeros(2)),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn gradient_examples() {
        let (phi, y) = random_problem(4, 9, 3, 1);
        let g = dual_gradient(&phi, &y, &pn(1.5), &DVector::zeros(4)).unwrap();
        assert_eq!(g, y);
        let g = dual_gradient(&row(&[1.0, 3.0]), &DVector::from_vec(vec![2.0]), &pn(2.0), &DVector::from_vec(vec![0.4])).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn hessian_examples() {
        let (phi, y) = random_problem(5, 12, 3, 2);
        let l = DVector::from_fn(5, |i, _| 0.3 - 0.1 * i as f64);
        let h = dual_hessian(&phi, &y, &pn(2.0), &l).unwrap();
        let expect = -(&phi * phi.transpose()) / 12.0;
        assert!((h - expect).amax() < 1e-14);
        let h0 = dual_hessian(&phi, &y, &pn(1.5), &DVector::zeros(5)).unwrap();
        assert_eq!(h0.amax(), 0.0);
        let h = dual_hessian(&phi, &y, &pn(1.3), &l).unwrap();
        assert!(linalg::lambda_max(&h) <= 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (phi, y) = random_problem(6, 40, 4, 3);
        for p in [1.2, 1.5, 2.0, 3.0] {
            let pen = pn(p);
            let l = DVector::from_fn(6, |i, _| 0.7 * ((i as f64) * 1.3).sin() + 0.2);
            let g = dual_gradient(&phi, &y, &pen, &l).unwrap();
            let h = dual_hessian(&phi, &y, &pen, &l).unwrap();
            let eps = 1e-5;
            let mut g_fd = DVector::zeros(6);
            let mut h_fd = DMatrix::zeros(6, 6);
            for k in 0..6 {
                let mut lp = l.clone();
                let mut lm = l.clone();
                lp[k] += eps;
                lm[k] -= eps;
                g_fd[k] = (dual_objective(&phi, &y, &pen, &lp).unwrap() - dual_objective(&phi, &y, &pen, &lm).unwrap()) / (2.0 * eps);
                let col = (dual_gradient(&phi, &y, &pen, &lp).unwrap() - dual_gradient(&phi, &y, &pen, &lm).unwrap()) / (2.0 * eps);
                h_fd.set_column(k, &col);
            }
            assert!((&g - &g_fd).norm() <= 1e-6 * g.norm(), "p = {p}");
            assert!((&h - &h_fd).norm() <= 1e-5 * h.norm(), "p = {p}");
        }
    }

    #[test]
    fn solve_tiny_examples() {
        let opts = SolverOptions::default();
        let s = solve_dual(&row(&[1.0]), &DVector::from_vec(vec![1.0]), &pn(2.0), &opts, None).unwrap();
        assert!(s.converged);
        assert!((s.lambda_hat[0] - 1.0).abs() < 1e-12);
        let s = solve_dual(&row(&[1.0, 3.0]), &DVector::from_vec(vec![2.0]), &pn(2.0), &opts, None).unwrap();
        assert!((s.lambda_hat[0] - 0.4).abs() < 1e-12);
        let pr = primal_from_dual(&row(&[1.0, 3.0]), &pn(2.0), &s).unwrap();
        assert!((pr.a[0] - 0.4).abs() < 1e-12 && (pr.a[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn p2_matches_linear_solve() {
        let (phi, y) = random_problem(20, 200, 6, 9);
        let s = solve_dual(&phi, &y, &pn(2.0), &SolverOptions::default(), None).unwrap();
        let gram = &phi * phi.transpose() / 200.0;
        let direct = gram.lu().solve(&y).unwrap();
        assert!((&s.lambda_hat - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn converges_for_several_p_with_monotone_trace() {
        let (phi, y) = random_problem(15, 60, 5, 4);
        for p in [1.1, 1.25, 1.5, 2.0, 3.0] {
            let pen = pn(p);
            let s = solve_dual(&phi, &y, &pen, &SolverOptions::default(), None).unwrap();
            assert!(s.converged, "p = {p}: {:?} after {} iters, grad {}", s.termination, s.iters, s.grad_norm);
            for w in s.trace.windows(2) {
                let slack = 1e-13 * (1.0 + w[0].objective.abs());
                assert!(w[1].objective >= w[0].objective - slack, "p = {p}");
            }
            let pr = primal_from_dual(&phi, &pen, &s).unwrap();
            let fit = &phi * &pr.a / 60.0;
            assert!((fit - &y).norm() <= 1e-8 * (1.0 + y.norm()));
            let gap = pr.objective_per_feature() - s.objective;
            assert!(gap.abs() <= 1e-6 * (1.0 + s.objective.abs()), "p = {p}, gap {gap}");
        }
    }

    #[test]
    fn converges_past_objective_resolution() {
        // Tolerances this tight need steps whose objective gain rounds to zero.
        let (phi, y) = random_problem(40, 400, 8, 9);
        let opts = SolverOptions { tol_grad_rel: 1e-13, tol_grad_abs: 1e-14, ..Default::default() };
        for p in [1.25, 1.5] {
            let s = solve_dual(&phi, &y, &pn(p), &opts, None).unwrap();
            assert!(s.converged, "p = {p}: {:?} after {} iters, grad {}", s.termination, s.iters, s.grad_norm);
            assert!(s.iters < 50, "p = {p}: {} iters", s.iters);
        }
    }

    #[test]
    fn large_p_returns_best_iterate() {
        // Q = 1.25: s has a quarter-power cusp at zero, which the clipped
        // Hessian only approximates, so full accuracy is not guaranteed.
        let (phi, y) = random_problem(15, 60, 5, 4);
        let s = solve_dual(&phi, &y, &pn(5.0), &SolverOptions::default(), None).unwrap();
        assert!(s.grad_norm <= 1e-5 * (1.0 + y.norm()), "{}", s.grad_norm);
        let min_in_trace = s.trace.iter().map(|t| t.grad_norm).fold(f64::INFINITY, f64::min);
        assert_eq!(s.grad_norm, min_in_trace);
    }

    #[test]
    fn zero_response_gives_zero_solution() {
        let (phi, _) = random_problem(5, 20, 3, 5);
        let y = DVector::zeros(5);
        let s = solve_dual(&phi, &y, &pn(1.5), &SolverOptions::default(), None).unwrap();
        assert!(s.converged);
        let pr = primal_from_dual(&phi, &pn(1.5), &s).unwrap();
        assert_eq!(pr.a.amax(), 0.0);
    }

    #[test]
    fn underdetermined_width_reports_not_converged() {
        // N < n: the constraints cannot all be met.
        let (phi, y) = random_problem(10, 4, 3, 6);
        let opts = SolverOptions { max_iters: 30, ..Default::default() };
        let s = solve_dual(&phi, &y, &pn(2.0), &opts, None).unwrap();
        assert!(!s.converged);
        assert_ne!(s.termination, Termination::Converged);
        let pr = primal_from_dual(&phi, &pn(2.0), &s).unwrap();
        assert!(!pr.converged);
    }

    #[test]
    fn custom_penalty_matches_pnorm() {
        use crate::penalty::{CustomPenalty, GrowthExponents};
        use std::sync::Arc;
        let q = 3.0;
        let custom = CustomPenalty {
            name: "p15".into(),
            conjugate: Arc::new(move |x: f64| x.abs().powf(q) / q),
            link: Arc::new(move |x: f64| x.signum() * x.abs().powf(q - 1.0)),
            link_prime: Arc::new(move |x: f64| (q - 1.0) * x.abs().powf(q - 2.0)),
        };
        let cp = PenaltySpec::custom(custom, GrowthExponents::uniform(q)).unwrap();
        let (phi, y) = random_problem(8, 40, 4, 7);
        let a = solve_dual(&phi, &y, &cp, &SolverOptions::default(), None).unwrap();
        let b = solve_dual(&phi, &y, &pn(1.5), &SolverOptions::default(), None).unwrap();
        assert!(a.converged && b.converged);
        assert!((&a.lambda_hat - &b.lambda_hat).norm() <= 1e-6 * b.lambda_hat.norm());
        let pa = primal_from_dual(&phi, &cp, &a).unwrap();
        let pb = primal_from_dual(&phi, &pn(1.5), &b).unwrap();
        assert!((pa.objective_primal - pb.objective_primal).abs() <= 1e-6 * pb.objective_primal);
    }
}
