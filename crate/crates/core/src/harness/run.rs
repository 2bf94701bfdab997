use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{Experiment, ExperimentConfig};
use super::result::*;
use crate::audit::{
    assumption_report, event_audit, hermite_coefficients, hermite_condition_check, smallball_estimate, Reference,
    SolvedModel,
};
use crate::error::{Error, Result};
use crate::featurize::{
    featurize, kernel_matrix, mean_features, sample_data, sample_weights, whiten, DataSpec, FeatureSpec, Instance,
    KernelMethod, KernelOracle,
};
use crate::penalty::PenaltySpec;
use crate::predict::{kernel_interpolant, l2_of_predictions, mse_of_predictions, predict_many, test_points, Predict};
use crate::rng::{self, label};
use crate::solver::{primal_from_dual, solve_dual, solve_l1, DualSolution};

/// Everything drawn once per seed. Weights and features for smaller `N` are
/// the leading rows and columns of the widest draw.
struct SeedCtx {
    seed: u64,
    inst: Instance,
    w: DMatrix<f64>,
    phi: DMatrix<f64>,
    x_test: DMatrix<f64>,
    truth: DVector<f64>,
}

fn seed_ctx(cfg: &ExperimentConfig, spec: &FeatureSpec, ds: &DataSpec, seed: u64, n_max: usize) -> Result<SeedCtx> {
    let inst = sample_data(ds, cfg.n, seed)?;
    let w = sample_weights(spec, cfg.d, n_max, seed)?;
    let phi = featurize(spec, &inst.x, &w, seed)?;
    let x_test = test_points(ds, cfg.m_test, seed)?;
    let truth = ds.responses(&x_test)?;
    Ok(SeedCtx { seed, inst, w, phi, x_test, truth })
}

fn pen_for(p: f64) -> Result<PenaltySpec> {
    if p == 1.0 {
        Ok(PenaltySpec::l1())
    } else {
        PenaltySpec::pnorm(p)
    }
}

/// Coefficients of a finite-width solve, with the dual solution when there is one.
struct Solved {
    a: DVector<f64>,
    dual: Option<DualSolution>,
    iters: usize,
    converged: bool,
}

fn solve_width(cfg: &ExperimentConfig, pen: &PenaltySpec, phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<Solved> {
    if pen.is_l1() {
        let s = solve_l1(phi, y, &cfg.lp)?;
        return Ok(Solved { a: s.a, dual: None, iters: s.iters, converged: s.converged });
    }
    let d = solve_dual(phi, y, pen, &cfg.solver, None)?;
    let pr = primal_from_dual(phi, pen, &d)?;
    Ok(Solved { a: pr.a, iters: d.iters, converged: d.converged, dual: Some(d) })
}

fn predictions(spec: &FeatureSpec, w: &DMatrix<f64>, a: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(predict_many(spec, w, &DMatrix::from_column_slice(a.len(), 1, a.as_slice()), x)?.column(0).into_owned())
}

/// Kernel oracle for the training covariates of one seed.
fn oracle_for(cfg: &ExperimentConfig, spec: &FeatureSpec, inst: &Instance, seed: u64) -> Result<KernelOracle> {
    let method = KernelMethod::best_for(spec, cfg.kernel_mc_samples);
    kernel_matrix(spec, &inst.x, method, rng::derive(seed, &[label::KERNEL_MC]))
}

/// Infinite-width stand-in on one seed's test points.
struct RefCtx {
    pred: DVector<f64>,
    /// Kernel interpolant `K^{-1} y` or the wide solve's dual parameter.
    lambda: Option<DVector<f64>>,
    wide: Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)>,
}

fn kernel_reference(cfg: &ExperimentConfig, spec: &FeatureSpec, ctx: &SeedCtx) -> Result<RefCtx> {
    let oracle = oracle_for(cfg, spec, &ctx.inst, ctx.seed)?;
    let kp = kernel_interpolant(&oracle, &ctx.inst, spec).map_err(|e| Error::ReferenceFailed(e.to_string()))?;
    Ok(RefCtx { pred: kp.predict(&ctx.x_test)?, lambda: Some(kp.coeffs), wide: None })
}

fn wide_reference(cfg: &ExperimentConfig, spec: &FeatureSpec, pen: &PenaltySpec, ctx: &SeedCtx) -> Result<RefCtx> {
    let rs = rng::derive(ctx.seed, &[label::REFERENCE]);
    let w = sample_weights(spec, cfg.d, cfg.n_ref, rs)?;
    let phi = featurize(spec, &ctx.inst.x, &w, rs)?;
    let s = solve_width(cfg, pen, &phi, &ctx.inst.y).map_err(|e| Error::ReferenceFailed(e.to_string()))?;
    if !s.converged {
        return Err(Error::ReferenceFailed(format!("N_ref = {} solve did not converge", cfg.n_ref)));
    }
    let pred = predictions(spec, &w, &s.a, &ctx.x_test)?;
    let lambda = s.dual.map(|d| d.lambda_hat);
    Ok(RefCtx { pred, lambda, wide: Some((w, phi, s.a)) })
}

struct Cell {
    row: Row,
    failure: Option<RowFailure>,
    solved: Option<Solved>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    spec: &FeatureSpec,
    ctx: &SeedCtx,
    p: f64,
    nf: usize,
    reference: Option<&RefCtx>,
) -> Cell {
    let start = Instant::now();
    let mut row = Row {
        experiment: cfg.experiment.name().into(),
        p,
        n: cfg.n,
        n_features: nf,
        seed: ctx.seed,
        test_error: f64::NAN,
        l2_to_ref: f64::NAN,
        solver_iters: 0,
        converged: false,
        wall_ms: 0.0,
    };
    let outcome = (|| -> Result<Solved> {
        let pen = pen_for(p)?;
        let phi = ctx.phi.columns(0, nf).into_owned();
        let s = solve_width(cfg, &pen, &phi, &ctx.inst.y)?;
        let w = ctx.w.rows(0, nf).into_owned();
        let pred = predictions(spec, &w, &s.a, &ctx.x_test)?;
        row.test_error = mse_of_predictions(&pred, &ctx.truth).value;
        if let Some(r) = reference {
            row.l2_to_ref = l2_of_predictions(&pred, &r.pred).value;
        }
        row.solver_iters = s.iters;
        row.converged = s.converged;
        Ok(s)
    })();
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok(s) => Cell { row, failure: None, solved: Some(s) },
        Err(e) => {
            let failure = RowFailure { p, n_features: nf, seed: ctx.seed, message: e.to_string() };
            Cell { row, failure: Some(failure), solved: None }
        }
    }
}

fn build_contexts(cfg: &ExperimentConfig, spec: &FeatureSpec, ds: &DataSpec) -> Result<Vec<SeedCtx>> {
    let n_max = *cfg.n_list.last().expect("validated nonempty");
    cfg.seeds.par_iter().map(|&s| seed_ctx(cfg, spec, ds, s, n_max)).collect()
}

/// Run every `(p, N, seed)` cell in parallel; rows come back ordered by
/// `p_list`, then `N_list`, then `seeds`.
fn run_grid(
    cfg: &ExperimentConfig,
    spec: &FeatureSpec,
    ctxs: &[SeedCtx],
    refs: Option<&[Vec<RefCtx>]>,
) -> Vec<Cell> {
    let keys: Vec<(usize, usize, usize)> = (0..cfg.p_list.len())
        .flat_map(|pi| (0..cfg.n_list.len()).flat_map(move |ni| (0..ctxs.len()).map(move |si| (pi, ni, si))))
        .collect();
    keys.par_iter()
        .map(|&(pi, ni, si)| {
            let r = refs.map(|r| &r[pi][si]);
            run_cell(cfg, spec, &ctxs[si], cfg.p_list[pi], cfg.n_list[ni], r)
        })
        .collect()
}

fn finish(cfg: &ExperimentConfig, cells: Vec<Cell>) -> (ExperimentResult, Vec<Option<Solved>>) {
    let mut rows = Vec::with_capacity(cells.len());
    let mut failures = Vec::new();
    let mut solved = Vec::with_capacity(cells.len());
    for c in cells {
        rows.push(c.row);
        failures.extend(c.failure);
        solved.push(c.solved);
    }
    let mut res = ExperimentResult::new(cfg.clone(), rows);
    res.failures = failures;
    (res, solved)
}

fn require(cfg: &ExperimentConfig, e: Experiment) -> Result<()> {
    if cfg.experiment != e {
        return Err(Error::Config(format!("config is for {}, not {}", cfg.experiment.name(), e.name())));
    }
    Ok(())
}

/// Test error against width for each `p`, plus the kernel interpolant's test
/// error (the `p = 2`, `N -> infinity` limit) when `p = 2` is in the list.
pub fn run_fig1(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    require(cfg, Experiment::Fig1)?;
    let (spec, ds) = (cfg.feature_spec(), cfg.data_spec()?);
    let ctxs = build_contexts(cfg, &spec, &ds)?;
    let (mut res, _) = finish(cfg, run_grid(cfg, &spec, &ctxs, None));
    if cfg.p_list.contains(&2.0) {
        let per_seed = ctxs
            .par_iter()
            .map(|c| {
                let r = kernel_reference(cfg, &spec, c)?;
                Ok(SeedValue { seed: c.seed, value: mse_of_predictions(&r.pred, &c.truth).value })
            })
            .collect::<Result<Vec<_>>>()?;
        let test_error = Summary::of(per_seed.iter().map(|s| s.value));
        res.kernel_reference = Some(KernelReference { per_seed, test_error });
    }
    Ok(res)
}

/// Solve and evaluate every configured cell, with no reference.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    require(cfg, Experiment::Solve)?;
    let (spec, ds) = (cfg.feature_spec(), cfg.data_spec()?);
    let ctxs = build_contexts(cfg, &spec, &ds)?;
    Ok(finish(cfg, run_grid(cfg, &spec, &ctxs, None)).0)
}

/// References per `(p, seed)`: the kernel interpolant at `p = 2`, a width-`N_ref` solve otherwise.
fn references(cfg: &ExperimentConfig, spec: &FeatureSpec, ctxs: &[SeedCtx]) -> Result<Vec<Vec<RefCtx>>> {
    cfg.p_list
        .iter()
        .map(|&p| {
            let pen = pen_for(p)?;
            ctxs.par_iter()
                .map(|c| if p == 2.0 { kernel_reference(cfg, spec, c) } else { wide_reference(cfg, spec, &pen, c) })
                .collect()
        })
        .collect()
}

/// Least-squares line through `(x, y)`: `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn slope_reports(cfg: &ExperimentConfig, res: &ExperimentResult) -> Vec<SlopeReport> {
    cfg.p_list
        .iter()
        .map(|&p| {
            let aggs: Vec<&Aggregate> = cfg.n_list.iter().filter_map(|&nf| res.aggregate_at(p, nf)).collect();
            let (lx, ly): (Vec<f64>, Vec<f64>) = aggs
                .iter()
                .filter(|a| a.l2_to_ref.mean > 0.0)
                .map(|a| ((a.n_features as f64).ln(), a.l2_to_ref.mean.ln()))
                .unzip();
            let (slope, intercept) = if lx.len() >= 2 { fit_line(&lx, &ly) } else { (f64::NAN, f64::NAN) };
            let mut increases = 0;
            let mut outside = 0;
            for w in aggs.windows(2) {
                let (a, b) = (&w[0].l2_to_ref, &w[1].l2_to_ref);
                if !(b.mean < a.mean) {
                    increases += 1;
                    if b.lo() > a.hi() {
                        outside += 1;
                    }
                }
            }
            SlopeReport { p, slope, intercept, increases, increases_outside_ci: outside }
        })
        .collect()
}

fn check_width_span(cfg: &ExperimentConfig) -> Result<()> {
    let (lo, hi) = (cfg.n_list[0], *cfg.n_list.last().expect("nonempty"));
    if lo == hi {
        return Err(Error::Config("slope is undefined for a single width".into()));
    }
    if hi < 16 * lo {
        return Err(Error::Config("N_list must span at least four octaves".into()));
    }
    Ok(())
}

/// Distance to the infinite-width reference against width, with a log-log slope per `p`.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    require(cfg, Experiment::Scaling)?;
    check_width_span(cfg)?;
    let (spec, ds) = (cfg.feature_spec(), cfg.data_spec()?);
    let ctxs = build_contexts(cfg, &spec, &ds)?;
    let refs = references(cfg, &spec, &ctxs)?;
    let (mut res, _) = finish(cfg, run_grid(cfg, &spec, &ctxs, Some(&refs)));
    res.slopes = slope_reports(cfg, &res);
    Ok(res)
}

/// The scaling study for identity features with noise, adding the noise
/// residual `||(1/N) Z s(Phi^T lambda_N) - E[z s(<phi, lambda_hat>)]||_2` per row.
pub fn run_latent(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    require(cfg, Experiment::Latent)?;
    if cfg.activation != crate::featurize::Activation::Identity {
        return Err(Error::WrongSpec("latent study needs identity features".into()));
    }
    if !(cfg.gamma > 0.0) {
        return Err(Error::WrongSpec("latent study needs gamma > 0; with gamma = 0 the kernel has rank <= d".into()));
    }
    let (spec, ds) = (cfg.feature_spec(), cfg.data_spec()?);
    let ctxs = build_contexts(cfg, &spec, &ds)?;
    let refs = references(cfg, &spec, &ctxs)?;
    let cells = run_grid(cfg, &spec, &ctxs, Some(&refs));
    let (mut res, solved) = finish(cfg, cells);
    res.slopes = slope_reports(cfg, &res);

    // E[z s(<phi, lambda>)] per (p, seed): gamma^2 lambda_hat at p = 2, else the wide solve's average.
    let g2 = cfg.gamma * cfg.gamma;
    let targets: Vec<Vec<Option<DVector<f64>>>> = refs
        .iter()
        .enumerate()
        .map(|(pi, per_seed)| {
            per_seed
                .iter()
                .zip(&ctxs)
                .map(|(r, c)| {
                    if cfg.p_list[pi] == 2.0 {
                        r.lambda.as_ref().map(|l| l * g2)
                    } else {
                        r.wide.as_ref().map(|(w, phi, a)| {
                            let z = phi - mean_features(&spec, &c.inst.x, w).expect("dims");
                            z * a / w.nrows() as f64
                        })
                    }
                })
                .collect()
        })
        .collect();
    let mut noise_residual = Vec::new();
    let mut idx = 0;
    for (pi, &p) in cfg.p_list.iter().enumerate() {
        for &nf in &cfg.n_list {
            for (si, c) in ctxs.iter().enumerate() {
                let value = match (&solved[idx], &targets[pi][si]) {
                    (Some(s), Some(t)) => {
                        let w = c.w.rows(0, nf);
                        let phi = c.phi.columns(0, nf);
                        let z = phi - mean_features(&spec, &c.inst.x, &w.into_owned())?;
                        (z * &s.a / nf as f64 - t).norm()
                    }
                    _ => f64::NAN,
                };
                noise_residual.push(CellValue { p, n_features: nf, seed: c.seed, value });
                idx += 1;
            }
        }
    }
    let seeds: Vec<LatentSeed> = ctxs
        .iter()
        .map(|c| {
            let smin = c.inst.x.clone().svd(false, false).singular_values.min();
            let c0_hat = smin / (cfg.n as f64).sqrt();
            let precondition = c0_hat > 0.0 && cfg.n as f64 >= 2.0 * cfg.d as f64 / (c0_hat * c0_hat);
            LatentSeed { seed: c.seed, c0_hat, precondition }
        })
        .collect();
    let trend_decreasing = cfg
        .p_list
        .iter()
        .map(|&p| {
            let first = res.aggregate_at(p, cfg.n_list[0]).map(|a| a.l2_to_ref.mean);
            let last = res.aggregate_at(p, *cfg.n_list.last().expect("nonempty")).map(|a| a.l2_to_ref.mean);
            (p, matches!((first, last), (Some(f), Some(l)) if l < f))
        })
        .collect();
    let precondition_met = seeds.iter().all(|s| s.precondition);
    res.latent = Some(LatentReport { seeds, noise_residual, trend_decreasing, precondition_met });
    Ok(res)
}

/// Hermite profile, assumption proxies and event budgets on the first seed, as one report.
pub fn run_audit(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    require(cfg, Experiment::Audit)?;
    let a = &cfg.audit;
    let (spec, ds) = (cfg.feature_spec(), cfg.data_spec()?);
    let seed = cfg.seeds[0];
    let hermite = hermite_coefficients(&cfg.activation, a.hermite_m_max, a.quad_order)?;
    let hermite_condition = hermite_condition_check(&hermite, a.ell, a.c0)?;

    let nf = *cfg.n_list.last().expect("nonempty");
    let ctx = seed_ctx(cfg, &spec, &ds, seed, nf)?;
    let oracle = oracle_for(cfg, &spec, &ctx.inst, seed)?;
    let assumptions = assumption_report(&spec, &ctx.inst, &oracle, &a.assumptions, seed)?;
    let sb_seed = rng::derive(seed, &[label::DIRECTIONS]);
    let sb_w = sample_weights(&spec, cfg.d, a.smallball_samples, sb_seed)?;
    let psi = whiten(&oracle, &featurize(&spec, &ctx.inst.x, &sb_w, sb_seed)?)?;
    let smallball_prob = smallball_estimate(&psi.transpose(), a.eta, a.directions, seed)?;

    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut failures = Vec::new();
    for &p in &cfg.p_list {
        let cell = run_cell(cfg, &spec, &ctx, p, nf, None);
        rows.push(cell.row);
        failures.extend(cell.failure);
        let Some(dual) = cell.solved.and_then(|s| s.dual) else { continue };
        let pen = pen_for(p)?;
        let w = ctx.w.rows(0, nf).into_owned();
        let phi = ctx.phi.columns(0, nf).into_owned();
        let finite = SolvedModel { w: &w, phi: &phi, sol: &dual };
        let outcome = if p == 2.0 {
            event_audit(&ctx.inst, &pen, &spec, finite, Reference::Kernel, &oracle, &ds, cfg.m_test, a.grid, seed)
                .map(|b| ("kernel", b))
        } else {
            let rs = rng::derive(seed, &[label::REFERENCE]);
            let w_ref = sample_weights(&spec, cfg.d, cfg.n_ref, rs)?;
            let phi_ref = featurize(&spec, &ctx.inst.x, &w_ref, rs)?;
            let sol_ref = solve_dual(&phi_ref, &ctx.inst.y, &pen, &cfg.solver, None)?;
            let wide = SolvedModel { w: &w_ref, phi: &phi_ref, sol: &sol_ref };
            event_audit(&ctx.inst, &pen, &spec, finite, Reference::Wide(wide), &oracle, &ds, cfg.m_test, a.grid, seed)
                .map(|b| ("wide", b))
        };
        match outcome {
            Ok((reference, budget)) => {
                events.push(EventEntry { p, n_features: nf, seed, reference: reference.into(), budget })
            }
            Err(e) => failures.push(RowFailure { p, n_features: nf, seed, message: format!("event audit: {e}") }),
        }
    }
    let mut res = ExperimentResult::new(cfg.clone(), rows);
    res.failures = failures;
    res.audit = Some(AuditReport {
        hermite,
        hermite_condition,
        assumptions,
        smallball_eta: a.eta,
        smallball_prob,
        events,
    });
    Ok(res)
}

/// Dispatch on `cfg.experiment`.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.experiment {
        Experiment::Fig1 => run_fig1(cfg),
        Experiment::Scaling => run_scaling(cfg),
        Experiment::Latent => run_latent(cfg),
        Experiment::Audit => run_audit(cfg),
        Experiment::Solve => run_solve(cfg),
    }
}
