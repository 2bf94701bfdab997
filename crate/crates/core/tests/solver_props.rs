use mci_core::solver::{dual_objective, primal_from_dual, solve_dual, solve_l1, LpOptions};
use mci_core::{PenaltySpec, SolverOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn problem() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (2usize..8, 3usize..8).prop_flat_map(|(n, mult)| {
        let nf = n * mult;
        (
            prop::collection::vec(-2.0f64..2.0, n * nf).prop_map(move |v| DMatrix::from_vec(n, nf, v)),
            prop::collection::vec(-1.0f64..1.0, n).prop_map(DVector::from_vec),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_dual_solves_interpolate_with_zero_gap((phi, y) in problem(), p in 1.2f64..3.0) {
        let pen = PenaltySpec::pnorm(p).unwrap();
        let s = solve_dual(&phi, &y, &pen, &SolverOptions::default(), None).unwrap();
        prop_assume!(s.converged);
        let tol = 1e-8 * (1.0 + y.norm());
        let pr = primal_from_dual(&phi, &pen, &s).unwrap();
        prop_assert!(pr.residual <= tol);
        prop_assert!((pr.objective_per_feature() - s.objective).abs() <= 1e-6 * (1.0 + s.objective.abs()));
        // The returned point is a maximizer: nearby points do not improve the objective.
        for k in 0..y.len() {
            let mut e = DVector::zeros(y.len());
            e[k] = 1e-3;
            let f = dual_objective(&phi, &y, &pen, &(&s.lambda_hat + e)).unwrap();
            prop_assert!(f <= s.objective + 1e-12 * (1.0 + s.objective.abs()));
        }
    }

    #[test]
    fn l1_objective_beats_any_dual_solution((phi, y) in problem()) {
        let lp = solve_l1(&phi, &y, &LpOptions::default()).unwrap();
        prop_assume!(lp.converged);
        prop_assert!(lp.residual <= 1e-8 * (1.0 + y.norm()));
        let pen = PenaltySpec::pnorm(2.0).unwrap();
        let s = solve_dual(&phi, &y, &pen, &SolverOptions::default(), None).unwrap();
        let l2 = primal_from_dual(&phi, &pen, &s).unwrap();
        prop_assert!(lp.objective_primal <= l2.a.abs().sum() * (1.0 + 1e-9));
    }
}
