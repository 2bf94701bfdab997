//! Kernel matrices `K_n = E_{w,z}[phi_n phi_n^T]` and whitening.

use std::f64::consts::PI;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{mean_features, sample_weight_rows, Activation, FeatureSpec, WeightDist};
use crate::error::{Error, Result};
use crate::linalg::{self, chunked_sum};
use crate::rng::{self, label};

/// Relative eigenvalue floor used when forming `K^{-1/2}`.
pub const KERNEL_EIG_FLOOR: f64 = 1e-10;
/// Default number of weight draws for Monte Carlo kernels.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

const MC_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    MonteCarlo { samples: usize },
    /// ReLU features with `N(0, I/d)` weights.
    ArcCosineClosedForm,
    /// Identity features: `K = X X^T / d + gamma^2 I`.
    LatentLinearClosedForm,
}

impl KernelMethod {
    fn name(&self) -> &'static str {
        match self {
            KernelMethod::MonteCarlo { .. } => "monte_carlo",
            KernelMethod::ArcCosineClosedForm => "arc_cosine",
            KernelMethod::LatentLinearClosedForm => "latent_linear",
        }
    }

    /// Closed form when one exists for the spec, Monte Carlo otherwise.
    pub fn best_for(spec: &FeatureSpec, mc_samples: usize) -> Self {
        match (&spec.activation, spec.weight_dist) {
            (Activation::Relu, WeightDist::GaussianIsotropic) => KernelMethod::ArcCosineClosedForm,
            (Activation::Identity, _) => KernelMethod::LatentLinearClosedForm,
            _ => KernelMethod::MonteCarlo { samples: mc_samples },
        }
    }

    fn check(&self, spec: &FeatureSpec) -> Result<()> {
        let bad = |reason: &str| Err(Error::IncompatibleMethod { method: self.name(), reason: reason.into() });
        match self {
            KernelMethod::ArcCosineClosedForm => {
                if spec.activation != Activation::Relu || spec.weight_dist != WeightDist::GaussianIsotropic {
                    return bad("requires ReLU features with Gaussian weights");
                }
            }
            KernelMethod::LatentLinearClosedForm => {
                if spec.activation != Activation::Identity {
                    return bad("requires identity features");
                }
            }
            KernelMethod::MonteCarlo { samples } => {
                if *samples == 0 {
                    return bad("needs at least one sample");
                }
            }
        }
        Ok(())
    }
}

/// Kernel matrix on the training points together with its whitening transform.
#[derive(Clone, Debug)]
pub struct KernelOracle {
    pub k: DMatrix<f64>,
    /// `K^{-1/2}` with eigenvalues floored at `floor_used`.
    pub inv_sqrt: DMatrix<f64>,
    /// `K^{1/2}` with the same floor.
    pub sqrt: DMatrix<f64>,
    pub floor_used: f64,
    pub method: KernelMethod,
    /// Entrywise Monte Carlo standard error (Monte Carlo only).
    pub std_error: Option<DMatrix<f64>>,
    /// Seed of the Monte Carlo weight stream, reused for out-of-sample kernels.
    pub mc_seed: u64,
    pub noise_gamma: f64,
}

impl KernelOracle {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// `||v||_K = sqrt(v^T K v)`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        linalg::a_norm(&self.k, v)
    }

    /// `||v||_{K^{-1}} = ||K^{-1/2} v||_2`.
    pub fn inv_norm(&self, v: &DVector<f64>) -> f64 {
        (&self.inv_sqrt * v).norm()
    }

    /// Build an oracle from an explicit kernel matrix.
    pub fn from_matrix(k: DMatrix<f64>, method: KernelMethod, noise_gamma: f64) -> Result<Self> {
        if !k.is_square() || k.nrows() == 0 {
            return Err(Error::DimMismatch(format!("kernel must be square, got {:?}", k.shape())));
        }
        let mut k = k;
        linalg::symmetrize(&mut k);
        let eig = linalg::sym_eigenvalues(&k);
        let (lmin, lmax) = (eig.min(), eig.max());
        if lmin < -1e-8 * lmax.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eig: lmin, max_eig: lmax });
        }
        let (inv_sqrt, sqrt, floor_used) = linalg::inv_sqrt_floored(&k, KERNEL_EIG_FLOOR);
        Ok(Self { k, inv_sqrt, sqrt, floor_used, method, std_error: None, mc_seed: 0, noise_gamma })
    }
}

/// Arc-cosine kernel for ReLU features with `w ~ N(0, I/d)`:
/// `k(x, x') = ||x|| ||x'|| / (2 pi d) * (sin t + (pi - t) cos t)` with `t` the angle.
pub fn arc_cosine(x: &[f64], xp: &[f64], d: usize) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let np = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || np == 0.0 {
        return 0.0;
    }
    let dot: f64 = x.iter().zip(xp).map(|(a, b)| a * b).sum();
    let cos = (dot / (nx * np)).clamp(-1.0, 1.0);
    let t = cos.acos();
    nx * np / (2.0 * PI * d as f64) * (t.sin() + (PI - t) * cos)
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Clone)]
struct MomentAcc {
    sum: DMatrix<f64>,
    sum_sq: DMatrix<f64>,
}

impl AddAssign<&MomentAcc> for MomentAcc {
    fn add_assign(&mut self, rhs: &MomentAcc) {
        self.sum += &rhs.sum;
        self.sum_sq += &rhs.sum_sq;
    }
}

/// Kernel matrix on the rows of `x` by the requested method.
pub fn kernel_matrix(spec: &FeatureSpec, x: &DMatrix<f64>, method: KernelMethod, seed: u64) -> Result<KernelOracle> {
    method.check(spec)?;
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidDim("empty covariate matrix".into()));
    }
    let gamma2 = spec.noise_gamma * spec.noise_gamma;
    let mut std_error = None;
    let mc_seed = rng::derive(seed, &[label::KERNEL_MC]);
    let mut k = match method {
        KernelMethod::ArcCosineClosedForm => {
            let rows = rows_of(x);
            DMatrix::from_fn(n, n, |i, j| arc_cosine(&rows[i], &rows[j], d))
        }
        KernelMethod::LatentLinearClosedForm => x * x.transpose() / d as f64,
        KernelMethod::MonteCarlo { samples } => {
            let zero = MomentAcc { sum: DMatrix::zeros(n, n), sum_sq: DMatrix::zeros(n, n) };
            let acc = chunked_sum(samples, MC_CHUNK, zero, |r| {
                let w = sample_weight_rows(spec.weight_dist, d, r, mc_seed);
                let phi = mean_features(spec, x, &w).expect("dims checked");
                let sum = &phi * phi.transpose();
                let sq = phi.map(|v| v * v);
                let sum_sq = &sq * sq.transpose();
                MomentAcc { sum, sum_sq }
            });
            let m = samples as f64;
            let mean = acc.sum / m;
            let se = DMatrix::from_fn(n, n, |i, j| {
                let var = (acc.sum_sq[(i, j)] / m - mean[(i, j)] * mean[(i, j)]).max(0.0);
                (var / m).sqrt()
            });
            std_error = Some(se);
            mean
        }
    };
    for i in 0..n {
        k[(i, i)] += gamma2;
    }
    let mut oracle = KernelOracle::from_matrix(k, method, spec.noise_gamma)?;
    oracle.std_error = std_error;
    oracle.mc_seed = mc_seed;
    Ok(oracle)
}

/// Mean-feature kernel `k(a_i, b_j) = E_w[phi_bar(a_i; w) phi_bar(b_j; w)]` between
/// the rows of `a` (`m x d`) and `b` (`n x d`), computed by the oracle's method.
/// Monte Carlo reuses the oracle's weight stream. Feature noise is not included.
pub fn cross_kernel(oracle: &KernelOracle, spec: &FeatureSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimMismatch(format!("d = {} vs d = {}", a.ncols(), b.ncols())));
    }
    let d = a.ncols();
    Ok(match oracle.method {
        KernelMethod::ArcCosineClosedForm => {
            let (ra, rb) = (rows_of(a), rows_of(b));
            DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| arc_cosine(&ra[i], &rb[j], d))
        }
        KernelMethod::LatentLinearClosedForm => a * b.transpose() / d as f64,
        KernelMethod::MonteCarlo { samples } => {
            let zero = DMatrix::zeros(a.nrows(), b.nrows());
            let sum = chunked_sum(samples, MC_CHUNK, zero, |r| {
                let w = sample_weight_rows(spec.weight_dist, d, r, oracle.mc_seed);
                let pa = mean_features(spec, a, &w).expect("dims checked");
                let pb = mean_features(spec, b, &w).expect("dims checked");
                pa * pb.transpose()
            });
            sum / samples as f64
        }
    })
}

/// Whitened features `Psi = K^{-1/2} Phi`.
pub fn whiten(oracle: &KernelOracle, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.nrows() != oracle.n() {
        return Err(Error::DimMismatch(format!("Phi has {} rows, kernel is {}x{}", phi.nrows(), oracle.n(), oracle.n())));
    }
    Ok(&oracle.inv_sqrt * phi)
}
