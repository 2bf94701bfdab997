//! Predictors built from solutions, Monte Carlo L2 distances and test errors,
//! and the kernel interpolant used as the infinite-width `p = 2` reference.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{cross_kernel, mean_features, DataSpec, FeatureSpec, Instance, KernelOracle};
use crate::penalty::PenaltySpec;
use crate::rng::{self, label};

/// Default number of Monte Carlo test points.
pub const DEFAULT_TEST_POINTS: usize = 20_000;

const PREDICT_CHUNK: usize = 512;

/// Anything that maps covariate rows to predictions.
pub trait Predict: Sync {
    fn input_dim(&self) -> usize;
    fn predict_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64>;

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimMismatch(format!("expected d = {}, got {}", self.input_dim(), x.ncols())));
        }
        Ok(self.predict_unchecked(x))
    }
}

/// Apply `f` to row blocks of `x` in parallel and concatenate in order.
fn by_row_chunks(x: &DMatrix<f64>, f: impl Fn(&DMatrix<f64>) -> DVector<f64> + Sync) -> DVector<f64> {
    let m = x.nrows();
    let parts: Vec<DVector<f64>> = (0..m.div_ceil(PREDICT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * PREDICT_CHUNK;
            let len = PREDICT_CHUNK.min(m - start);
            f(&x.rows(start, len).into_owned())
        })
        .collect();
    DVector::from_iterator(m, parts.into_iter().flat_map(|p| p.data.as_vec().clone()))
}

/// Random-features predictor `f(x) = (1/N) sum_j a_j phi_bar(x; w_j)`.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub w: DMatrix<f64>,
    pub a: DVector<f64>,
    pub spec: FeatureSpec,
}

impl Predictor {
    pub fn new(w: DMatrix<f64>, a: DVector<f64>, spec: FeatureSpec) -> Result<Self> {
        if w.nrows() != a.len() {
            return Err(Error::DimMismatch(format!("W has {} rows, a has {} entries", w.nrows(), a.len())));
        }
        Ok(Self { w, a, spec })
    }

    /// Predictor at dual parameter `lambda`: `a_j = s(<phi_j, lambda>)`.
    pub fn at_dual(w: &DMatrix<f64>, phi: &DMatrix<f64>, pen: &PenaltySpec, lambda: &DVector<f64>, spec: &FeatureSpec) -> Result<Self> {
        pen.require_smooth()?;
        if phi.ncols() != w.nrows() || phi.nrows() != lambda.len() {
            return Err(Error::DimMismatch("Phi, W and lambda disagree".into()));
        }
        let a = phi.tr_mul(lambda).map(|u| pen.link_unchecked(u));
        Self::new(w.clone(), a, spec.clone())
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }
}

impl Predict for Predictor {
    fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn predict_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let nf = self.width() as f64;
        by_row_chunks(x, |blk| mean_features(&self.spec, blk, &self.w).expect("dims checked") * &self.a / nf)
    }
}

/// Predictions of several coefficient vectors sharing one weight set: column `g`
/// of the `m x G` result is the predictor with coefficients `a.column(g)`.
pub fn predict_many(spec: &FeatureSpec, w: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != a.nrows() || w.ncols() != x.ncols() {
        return Err(Error::DimMismatch("weights, coefficients and covariates disagree".into()));
    }
    let nf = w.nrows() as f64;
    Ok(stack_row_chunks(x, a.ncols(), |blk| mean_features(spec, blk, w).expect("dims checked") * a / nf))
}

fn stack_row_chunks(x: &DMatrix<f64>, cols: usize, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync) -> DMatrix<f64> {
    let m = x.nrows();
    let parts: Vec<DMatrix<f64>> = (0..m.div_ceil(PREDICT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * PREDICT_CHUNK;
            f(&x.rows(start, PREDICT_CHUNK.min(m - start)).into_owned())
        })
        .collect();
    let mut out = DMatrix::zeros(m, cols);
    for (c, p) in parts.iter().enumerate() {
        out.rows_mut(c * PREDICT_CHUNK, p.nrows()).copy_from(p);
    }
    out
}

/// Kernel interpolant `f(x) = k(x, X)^T K^{-1} y`.
#[derive(Clone, Debug)]
pub struct KernelPredictor {
    pub x_train: DMatrix<f64>,
    pub coeffs: DVector<f64>,
    pub kernel: KernelOracle,
    pub spec: FeatureSpec,
}

impl KernelPredictor {
    /// `||K coeffs - y||_2`.
    pub fn training_residual(&self, y: &DVector<f64>) -> f64 {
        (&self.kernel.k * &self.coeffs - y).norm()
    }
}

impl Predict for KernelPredictor {
    fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    fn predict_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        by_row_chunks(x, |blk| {
            cross_kernel(&self.kernel, &self.spec, blk, &self.x_train).expect("dims checked") * &self.coeffs
        })
    }
}

/// Closure-backed predictor, handy for targets and test doubles.
pub struct FnPredictor<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predict for FnPredictor<F> {
    fn input_dim(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let rows: Vec<f64> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let r: Vec<f64> = x.row(i).iter().copied().collect();
                (self.f)(&r)
            })
            .collect();
        DVector::from_vec(rows)
    }
}

/// `f(x) = 0`.
pub fn zero_predictor(d: usize) -> FnPredictor<impl Fn(&[f64]) -> f64 + Sync> {
    FnPredictor { d, f: |_: &[f64]| 0.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_and_se(v: &DVector<f64>) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.sum() / m;
    let var = v.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// Squared differences `(f(x_k) - g(x_k))^2` on given points.
pub fn squared_differences(f: &dyn Predict, g: &dyn Predict, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let a = f.predict(x)?;
    let b = g.predict(x)?;
    Ok((a - b).map(|v| v * v))
}

/// Root-mean-square difference on fixed points, with delta-method standard error.
pub fn l2_on_points(f: &dyn Predict, g: &dyn Predict, x: &DMatrix<f64>) -> Result<McEstimate> {
    Ok(l2_of_predictions(&f.predict(x)?, &g.predict(x)?))
}

/// Root-mean-square difference of two prediction vectors on the same points.
pub fn l2_of_predictions(a: &DVector<f64>, b: &DVector<f64>) -> McEstimate {
    let (mean, se) = mean_and_se(&(a - b).map(|v| v * v));
    let value = mean.max(0.0).sqrt();
    let std_error = if value > 0.0 { se / (2.0 * value) } else { 0.0 };
    McEstimate { value, std_error }
}

/// Mean squared difference of two prediction vectors on the same points.
pub fn mse_of_predictions(a: &DVector<f64>, b: &DVector<f64>) -> McEstimate {
    let (value, std_error) = mean_and_se(&(a - b).map(|v| v * v));
    McEstimate { value, std_error }
}

/// The `m` Monte Carlo test points used by [`l2_distance`] and [`test_error`] for `seed`.
pub fn test_points(ds: &DataSpec, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m < 100 {
        return Err(Error::InvalidM(m));
    }
    Ok(ds.sample_covariates(m, rng::derive(seed, &[label::TEST])))
}

/// Monte Carlo estimate of `||f - g||_{L2(P)}` over `m` fresh draws from `ds`.
pub fn l2_distance(f: &dyn Predict, g: &dyn Predict, ds: &DataSpec, m: usize, seed: u64) -> Result<McEstimate> {
    let x = test_points(ds, m, seed)?;
    l2_on_points(f, g, &x)
}

/// Monte Carlo mean-squared error `E (f(x) - f*(x))^2` against the ridge target.
pub fn test_error(f: &dyn Predict, ds: &DataSpec, m: usize, seed: u64) -> Result<McEstimate> {
    let target = ds.target_fn().ok_or(Error::NoTarget)?;
    let x = test_points(ds, m, seed)?;
    let truth = FnPredictor { d: ds.d, f: target };
    Ok(mse_of_predictions(&f.predict(&x)?, &truth.predict(&x)?))
}

/// Kernel interpolant with `coeffs = K^{-1} y`.
pub fn kernel_interpolant(oracle: &KernelOracle, inst: &Instance, spec: &FeatureSpec) -> Result<KernelPredictor> {
    if oracle.n() != inst.n() {
        return Err(Error::DimMismatch(format!("kernel is {}x{}, n = {}", oracle.n(), oracle.n(), inst.n())));
    }
    let chol = oracle.k.clone().cholesky().ok_or(Error::SingularKernel)?;
    let coeffs = chol.solve(&inst.y);
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKernel);
    }
    Ok(KernelPredictor { x_train: inst.x.clone(), coeffs, kernel: oracle.clone(), spec: spec.clone() })
}
