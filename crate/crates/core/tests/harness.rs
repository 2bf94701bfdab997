use std::process::Command;

use mci_core::harness::{load, persist, run, Experiment, ExperimentConfig, ExperimentResult, Row};
use mci_core::Error;
use proptest::prelude::*;

fn cfg(exp: Experiment, sets: &[&str]) -> mci_core::Result<ExperimentConfig> {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::resolve(exp, None, &sets, None)
}

const SMALL: &[&str] = &["d=4", "n=12", "M_test=500", "p_list=[1,1.5,2]", "N_list=[48,96]", "seeds=[3,4]"];

#[test]
fn reruns_reproduce_rows_up_to_wall_time() {
    let c = cfg(Experiment::Solve, SMALL).unwrap();
    let (a, b) = (run(&c).unwrap(), run(&c).unwrap());
    assert_eq!(a.rows.len(), 12);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let mut y = y.clone();
        y.wall_ms = x.wall_ms;
        assert!(x.same_as(&y), "{x:?} vs {y:?}");
    }
}

#[test]
fn rows_are_ordered_by_p_then_width_then_seed() {
    let c = cfg(Experiment::Solve, SMALL).unwrap();
    let keys: Vec<(f64, usize, u64)> = run(&c).unwrap().rows.iter().map(|r| (r.p, r.n_features, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
}

#[test]
fn narrow_rows_do_not_depend_on_the_widest_width() {
    let narrow = cfg(Experiment::Solve, &["d=4", "n=12", "M_test=500", "N_list=[48]", "seeds=[3]"]).unwrap();
    let wide = cfg(Experiment::Solve, &["d=4", "n=12", "M_test=500", "N_list=[48,400]", "seeds=[3]"]).unwrap();
    let (a, b) = (run(&narrow).unwrap(), run(&wide).unwrap());
    assert_eq!(a.rows[0].test_error, b.rows[0].test_error);
}

#[test]
fn too_narrow_rows_are_recorded_as_unconverged() {
    let c = cfg(Experiment::Solve, &["d=4", "n=12", "M_test=500", "N_list=[6]", "seeds=[0]", "solver.max_iters=20"])
        .unwrap();
    let res = run(&c).unwrap();
    assert_eq!(res.rows.len(), 1);
    assert!(!res.rows[0].converged);
    assert!(res.has_row_failures());
}

#[test]
fn fig1_confidence_interval_shrinks_with_seed_count() {
    let base = ["d=5", "n=20", "M_test=2000", "p_list=[2]", "N_list=[256]"];
    let ci = |k: usize| {
        let seeds = format!("seeds={:?}", (0..k as u64).collect::<Vec<_>>());
        let mut sets = base.to_vec();
        sets.push(&seeds);
        let r = run(&cfg(Experiment::Fig1, &sets).unwrap()).unwrap();
        r.aggregates[0].test_error.ci_half
    };
    let ratio = ci(5) / ci(20);
    // sqrt(20 / 5) = 2 up to the variability of the sample standard deviation.
    assert!((1.2..3.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn fig1_reports_kernel_reference_only_with_p2() {
    let with = run(&cfg(Experiment::Fig1, &["d=4", "n=12", "M_test=500", "p_list=[2]", "N_list=[64]", "seeds=[0]"]).unwrap())
        .unwrap();
    assert_eq!(with.kernel_reference.unwrap().per_seed.len(), 1);
    let without =
        run(&cfg(Experiment::Fig1, &["d=4", "n=12", "M_test=500", "p_list=[1.5]", "N_list=[64]", "seeds=[0]"]).unwrap())
            .unwrap();
    assert!(without.kernel_reference.is_none());
}

#[test]
fn scaling_rejects_short_width_ranges() {
    for lists in ["N_list=[256]", "N_list=[256,512,1024]"] {
        let c = cfg(Experiment::Scaling, &[lists]).unwrap();
        assert!(matches!(run(&c), Err(Error::Config(_))), "{lists}");
    }
}

#[test]
fn scaling_distances_shrink_with_width() {
    let c = cfg(
        Experiment::Scaling,
        &["d=4", "n=12", "M_test=1000", "N_list=[64,1024]", "seeds=[0,1,2]", "N_ref=8192", "p_list=[1.5,2]"],
    )
    .unwrap();
    let res = run(&c).unwrap();
    for s in &res.slopes {
        assert!(s.slope < 0.0, "p = {}: slope {}", s.p, s.slope);
    }
}

#[test]
fn latent_requires_identity_features_with_noise() {
    let c = cfg(Experiment::Latent, &["gamma=0"]).unwrap();
    assert!(matches!(run(&c), Err(Error::WrongSpec(_))));
    let c = cfg(Experiment::Latent, &["activation=\"relu\""]).unwrap();
    assert!(matches!(run(&c), Err(Error::WrongSpec(_))));
}

#[test]
fn latent_reports_noise_residual_and_precondition() {
    let c = cfg(Experiment::Latent, &["d=3", "n=30", "M_test=500", "N_list=[64,1024]", "seeds=[0,1]"]).unwrap();
    let res = run(&c).unwrap();
    let lat = res.latent.unwrap();
    assert_eq!(lat.seeds.len(), 2);
    assert_eq!(lat.noise_residual.len(), 4);
    assert!(lat.noise_residual.iter().all(|v| v.value.is_finite() && v.value >= 0.0));
    assert!(lat.seeds.iter().all(|s| s.c0_hat > 0.0));
}

#[test]
fn audit_emits_one_report() {
    let c = cfg(Experiment::Audit, &["M_test=500", "N_ref=2048", "audit.smallball_samples=5000", "p_list=[1.5,2]"]).unwrap();
    let res = run(&c).unwrap();
    let a = res.audit.unwrap();
    assert_eq!(a.events.len(), 2);
    assert!(a.smallball_prob >= 0.0 && a.smallball_prob <= 1.0);
    assert_eq!(a.hermite.mu.len(), 13);
}

#[test]
fn persisted_result_embeds_resolved_config() {
    let c = cfg(Experiment::Solve, SMALL).unwrap();
    let res = run(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist(&res, dir.path()).unwrap();
    let back = load(dir.path()).unwrap();
    assert_eq!(back.config, c);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert!(json["config"]["solver"]["max_iters"].is_number());
}

fn mci(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mci")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let o = mci(&[
        "solve", "--out", out.to_str().unwrap(), "--seed", "5", "--threads", "2", "--set", "d=3", "--set", "n=10",
        "--set", "M_test=200", "--set", "N_list=[64]",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(out.join("rows.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("solve,2.0000000000000000e0,10,64,5,"));

    let fail = dir.path().join("fail");
    let o = mci(&[
        "solve", "--out", fail.to_str().unwrap(), "--set", "n=10", "--set", "M_test=200", "--set", "N_list=[4]",
        "--set", "solver.max_iters=10",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(fail.join("rows.csv").exists());

    let o = mci(&["solve", "--out", fail.to_str().unwrap(), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mci(&["fig1", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cli_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"d": 3, "n": 10, "M_test": 200, "N_list": [32, 64], "seeds": [7]}"#).unwrap();
    let out = dir.path().join("o");
    let o = mci(&["solve", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let res = load(&out).unwrap();
    assert_eq!(res.config.n_list, vec![32, 64]);
    assert_eq!(res.rows.len(), 2);
}

fn row_strategy() -> impl Strategy<Value = Row> {
    (
        prop::sample::select(vec!["fig1", "scaling", "latent", "audit", "solve"]),
        1.0f64..4.0,
        1usize..500,
        1usize..100_000,
        any::<u64>(),
        prop_oneof![Just(f64::NAN), any::<f64>().prop_filter("finite", |v| v.is_finite())],
        prop_oneof![Just(f64::NAN), 0.0f64..1e6],
        0usize..10_000,
        any::<bool>(),
        0.0f64..1e7,
    )
        .prop_map(|(e, p, n, nf, seed, te, l2, it, conv, ms)| Row {
            experiment: e.into(),
            p,
            n,
            n_features: nf,
            seed,
            test_error: te,
            l2_to_ref: l2,
            solver_iters: it,
            converged: conv,
            wall_ms: ms,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn persist_load_is_identity_on_rows(rows in prop::collection::vec(row_strategy(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let res = ExperimentResult::new(ExperimentConfig::defaults(Experiment::Solve), rows.clone());
        persist(&res, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        prop_assert_eq!(back.rows.len(), rows.len());
        for (a, b) in back.rows.iter().zip(&rows) {
            prop_assert!(a.same_as(b));
        }
    }
}
