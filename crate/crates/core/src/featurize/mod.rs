//! Weight sampling, feature maps, data generation, kernel matrices and whitening.
//!
//! Conventions: covariates `X` are `n x d` (one row per sample), weights `W` are
//! `N x d` (one row per feature), and feature matrices `Phi` are `n x N` so that
//! column `j` is the feature vector `phi_n(w_j)` over the training points.

mod kernel;

pub use kernel::{cross_kernel, kernel_matrix, whiten, KernelMethod, KernelOracle, DEFAULT_MC_SAMPLES};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};

/// Scalar activation `sigma` with `sigma(0) = 0` for the built-ins.
#[derive(Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// `min(max(u, 0), 1)`.
    TruncatedRelu,
    /// Latent linear model `phi = <x, w> + z`.
    Identity,
    #[serde(skip)]
    Custom(CustomActivation),
}

/// User-supplied activation. `kinks` lists points where it is not smooth, which
/// the Hermite quadrature uses as panel breakpoints.
#[derive(Clone)]
pub struct CustomActivation {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kinks: Vec<f64>,
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "Relu"),
            Activation::TruncatedRelu => write!(f, "TruncatedRelu"),
            Activation::Identity => write!(f, "Identity"),
            Activation::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl PartialEq for Activation {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Activation::Relu, Activation::Relu)
            | (Activation::TruncatedRelu, Activation::TruncatedRelu)
            | (Activation::Identity, Activation::Identity) => true,
            (Activation::Custom(a), Activation::Custom(b)) => Arc::ptr_eq(&a.f, &b.f),
            _ => false,
        }
    }
}

impl Activation {
    pub fn custom(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static, kinks: Vec<f64>) -> Self {
        Activation::Custom(CustomActivation { name: name.into(), f: Arc::new(f), kinks })
    }

    #[inline]
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::TruncatedRelu => u.clamp(0.0, 1.0),
            Activation::Identity => u,
            Activation::Custom(c) => (c.f)(u),
        }
    }

    /// Points of non-smoothness.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Activation::Relu => vec![0.0],
            Activation::TruncatedRelu => vec![0.0, 1.0],
            Activation::Identity => vec![],
            Activation::Custom(c) => c.kinks.clone(),
        }
    }

    /// Lipschitz constant of the built-ins; unknown for custom maps.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Activation::Custom(_) => None,
            _ => Some(1.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::TruncatedRelu => "truncated_relu".into(),
            Activation::Identity => "identity".into(),
            Activation::Custom(c) => c.name.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDist {
    /// `N(0, I_d / d)`.
    #[default]
    GaussianIsotropic,
    /// Uniform on the unit sphere.
    UniformSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub activation: Activation,
    pub weight_dist: WeightDist,
    /// Standard deviation of the additive feature noise `z ~ N(0, gamma^2)`.
    pub noise_gamma: f64,
}

impl FeatureSpec {
    pub fn new(activation: Activation, weight_dist: WeightDist, noise_gamma: f64) -> Self {
        Self { activation, weight_dist, noise_gamma }
    }

    pub fn relu() -> Self {
        Self::new(Activation::Relu, WeightDist::GaussianIsotropic, 0.0)
    }

    pub fn latent_linear(gamma: f64) -> Self {
        Self::new(Activation::Identity, WeightDist::GaussianIsotropic, gamma)
    }
}

/// Training covariates and responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Instance {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidDim("instance needs n >= 1 and d >= 1".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("instance contains NaN"));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Covariates {
    /// Uniform on the sphere of radius `sqrt(d)`.
    #[default]
    UniformSphereSqrtD,
    /// Standard Gaussian `N(0, I_d)`, a sub-Gaussian isotropic alternative.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `f*(x) = sigma*(<w*, x>)` with `||w*||_2 = 1`.
    Ridge { w_star: Vec<f64>, activation: Activation },
    /// Responses supplied by the caller; no target function is known.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub d: usize,
    pub covariates: Covariates,
    pub target: Target,
}

impl DataSpec {
    pub fn new(d: usize, covariates: Covariates, target: Target) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDim("d must be >= 1".into()));
        }
        if let Target::Ridge { w_star, .. } = &target {
            if w_star.len() != d {
                return Err(Error::DimMismatch(format!("w* has length {}, d = {d}", w_star.len())));
            }
            let norm = w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidDim(format!("w* must be a unit vector, norm {norm}")));
            }
        }
        Ok(Self { d, covariates, target })
    }

    /// Ridge target along the first coordinate axis on the `sqrt(d)` sphere.
    pub fn ridge(d: usize, activation: Activation) -> Self {
        let mut w = vec![0.0; d];
        if d > 0 {
            w[0] = 1.0;
        }
        Self::new(d, Covariates::UniformSphereSqrtD, Target::Ridge { w_star: w, activation })
            .expect("e1 is a unit vector")
    }

    /// `f*(x)` if the spec carries a ridge target.
    pub fn target_fn(&self) -> Option<impl Fn(&[f64]) -> f64 + '_> {
        match &self.target {
            Target::Ridge { w_star, activation } => Some(move |x: &[f64]| {
                let u: f64 = w_star.iter().zip(x).map(|(a, b)| a * b).sum();
                activation.apply(u)
            }),
            Target::External => None,
        }
    }

    /// `m x d` covariates, one sub-seeded stream per row.
    pub fn sample_covariates(&self, m: usize, seed: u64) -> DMatrix<f64> {
        let d = self.d;
        let cov = self.covariates;
        let rows: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut r = rng::stream(seed, &[label::DATA, i as u64]);
                let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                if cov == Covariates::UniformSphereSqrtD {
                    let scale = (d as f64).sqrt() / v.iter().map(|t| t * t).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|t| *t *= scale);
                }
                v
            })
            .collect();
        DMatrix::from_row_slice(m, d, &rows)
    }

    /// Evaluate the target on every row of `x`.
    pub fn responses(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let f = self.target_fn().ok_or(Error::NoTarget)?;
        let mut buf = vec![0.0; x.ncols()];
        Ok(DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = x[(i, k)];
                }
                f(&buf)
            }),
        ))
    }
}

/// `N x d` weight matrix with i.i.d. rows from the spec's weight distribution.
/// Row `j` depends only on `(seed, j)`, so weight sets are nested across `N`.
pub fn sample_weights(spec: &FeatureSpec, d: usize, n_features: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n_features == 0 || d == 0 {
        return Err(Error::InvalidDim(format!("need N >= 1 and d >= 1, got N = {n_features}, d = {d}")));
    }
    Ok(sample_weight_rows(spec.weight_dist, d, 0..n_features, seed))
}

pub(crate) fn sample_weight_rows(
    dist: WeightDist,
    d: usize,
    rows: std::ops::Range<usize>,
    seed: u64,
) -> DMatrix<f64> {
    let count = rows.len();
    let scale = 1.0 / (d as f64).sqrt();
    let data: Vec<f64> = rows
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut r = rng::stream(seed, &[label::WEIGHTS, j as u64]);
            let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            match dist {
                WeightDist::GaussianIsotropic => v.iter_mut().for_each(|t| *t *= scale),
                WeightDist::UniformSphere => {
                    let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|t| *t /= norm);
                }
            }
            v
        })
        .collect();
    DMatrix::from_row_slice(count, d, &data)
}

fn check_dims(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != w.ncols() {
        return Err(Error::DimMismatch(format!(
            "covariates have d = {}, weights have d = {}",
            x.ncols(),
            w.ncols()
        )));
    }
    Ok(())
}

/// Mean features `sigma(<x_i, w_j>)` as an `n x N` matrix.
pub fn mean_features(spec: &FeatureSpec, x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(x, w)?;
    let mut u = x * w.transpose();
    let act = &spec.activation;
    if *act != Activation::Identity {
        u.as_mut_slice().par_iter_mut().for_each(|v| *v = act.apply(*v));
    }
    Ok(u)
}

/// Randomized features `sigma(<x_i, w_j>) + z_ij` with `z_ij ~ N(0, gamma^2)`.
/// Noise for column `j` is drawn from a stream keyed by `(seed, j)`.
pub fn featurize(spec: &FeatureSpec, x: &DMatrix<f64>, w: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let mut phi = mean_features(spec, x, w)?;
    let gamma = spec.noise_gamma;
    if gamma > 0.0 {
        let n = phi.nrows();
        phi.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
            let mut r = rng::stream(seed, &[label::NOISE, j as u64]);
            for v in col.iter_mut() {
                let z: f64 = r.sample(StandardNormal);
                *v += gamma * z;
            }
        });
    }
    Ok(phi)
}

/// `phi_bar(x; w) = sigma(<x, w>)`, the feature with noise integrated out.
pub fn mean_feature(spec: &FeatureSpec, x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::DimMismatch(format!("x has {} entries, w has {}", x.len(), w.len())));
    }
    let u: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(spec.activation.apply(u))
}

/// Draw `n` covariates and noiseless ridge responses.
pub fn sample_data(ds: &DataSpec, n: usize, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::InvalidDim("n must be >= 1".into()));
    }
    let x = ds.sample_covariates(n, seed);
    let y = match ds.target {
        Target::Ridge { .. } => ds.responses(&x)?,
        Target::External => DVector::zeros(n),
    };
    Instance::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_weights_have_variance_one_over_d() {
        let spec = FeatureSpec::relu();
        let w = sample_weights(&spec, 4, 3, 1).unwrap();
        assert_eq!(w.shape(), (3, 4));
        let big = sample_weights(&spec, 4, 100_000, 1).unwrap();
        for k in 0..4 {
            let col = big.column(k);
            let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            assert!((var - 0.25).abs() < 0.005, "coordinate {k} variance {var}");
        }
        // nested across N
        assert_eq!(big.rows(0, 3), w.rows(0, 3));
    }

    #[test]
    fn sphere_weights_have_unit_norm() {
        let spec = FeatureSpec::new(Activation::Relu, WeightDist::UniformSphere, 0.0);
        let w = sample_weights(&spec, 10, 100, 7).unwrap();
        for r in w.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_is_invalid() {
        assert!(matches!(sample_weights(&FeatureSpec::relu(), 3, 0, 1), Err(Error::InvalidDim(_))));
        assert!(matches!(sample_weights(&FeatureSpec::relu(), 0, 3, 1), Err(Error::InvalidDim(_))));
    }

    #[test]
    fn featurize_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w = DMatrix::from_row_slice(1, 2, &[-2.0, 0.0]);
        assert_eq!(featurize(&FeatureSpec::relu(), &x, &w, 0).unwrap()[(0, 0)], 0.0);

        let trunc = FeatureSpec::new(Activation::TruncatedRelu, WeightDist::GaussianIsotropic, 0.0);
        let x3 = DMatrix::from_row_slice(1, 2, &[3.0, 0.0]);
        let e1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(featurize(&trunc, &x3, &e1, 0).unwrap()[(0, 0)], 1.0);

        let lin = FeatureSpec::latent_linear(0.0);
        let xs = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 2.0, 1.0, 0.5, -0.25]);
        let ws = DMatrix::from_row_slice(2, 3, &[1.5, 0.1, -0.7, -2.0, 3.0, 0.4]);
        let phi = featurize(&lin, &xs, &ws, 5).unwrap();
        assert_eq!(phi, &xs * ws.transpose());

        let bad = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert!(matches!(featurize(&lin, &x, &bad, 0), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn mean_feature_examples() {
        assert_eq!(mean_feature(&FeatureSpec::relu(), &[2.0, 0.0], &[1.0, 0.0]).unwrap(), 2.0);
        let noisy = FeatureSpec::latent_linear(1.0);
        assert_eq!(mean_feature(&noisy, &[2.0, 3.0], &[0.5, -1.0]).unwrap(), 1.0 - 3.0);
        let trunc = FeatureSpec::new(Activation::TruncatedRelu, WeightDist::GaussianIsotropic, 0.0);
        assert_eq!(mean_feature(&trunc, &[0.5, 0.0], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(mean_feature(&trunc, &[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn noise_has_variance_gamma_squared() {
        // Chi-square test of the sample variance over 20_000 draws at the 99% level.
        let gamma = 0.7;
        let spec = FeatureSpec::new(Activation::Relu, WeightDist::GaussianIsotropic, gamma);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
        let w = DMatrix::from_fn(20_000, 2, |_, k| if k == 0 { 0.8 } else { 0.3 });
        let phi = featurize(&spec, &x, &w, 11).unwrap();
        let mean = spec.activation.apply(0.8 - 0.15);
        let m = phi.ncols() as f64;
        let ss: f64 = phi.iter().map(|v| (v - mean) * (v - mean)).sum();
        let stat = ss / (gamma * gamma);
        // chi2 with m dof: mean m, sd sqrt(2m); 99% two-sided ~ +-2.576 sd
        let z = (stat - m) / (2.0 * m).sqrt();
        assert!(z.abs() < 2.576, "z = {z}");
    }

    #[test]
    fn featurize_is_deterministic() {
        let spec = FeatureSpec::latent_linear(1.0);
        let ds = DataSpec::ridge(5, Activation::Relu);
        let inst = sample_data(&ds, 8, 3).unwrap();
        let w = sample_weights(&spec, 5, 64, 9).unwrap();
        let a = featurize(&spec, &inst.x, &w, 4).unwrap();
        let b = featurize(&spec, &inst.x, &w, 4).unwrap();
        assert_eq!(a, b);
        let c = featurize(&spec, &inst.x, &w, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sphere_data_and_ridge_targets() {
        let ds = DataSpec::ridge(30, Activation::Relu);
        let inst = sample_data(&ds, 150, 42).unwrap();
        for r in inst.x.row_iter() {
            assert!((r.norm() - 30f64.sqrt()).abs() < 1e-10);
        }
        for i in 0..inst.n() {
            assert_eq!(inst.y[i], inst.x[(i, 0)].max(0.0));
        }

        let d = 6;
        let mut x = DMatrix::zeros(2, d);
        x[(0, 0)] = (d as f64).sqrt();
        x[(1, 0)] = -1.0;
        let y = DataSpec::ridge(d, Activation::Relu).responses(&x).unwrap();
        assert_eq!(y[0], (d as f64).sqrt());
        assert_eq!(y[1], 0.0);
        assert!(sample_data(&ds, 0, 1).is_err());
    }

    #[test]
    fn data_spec_rejects_non_unit_direction() {
        let t = Target::Ridge { w_star: vec![1.0, 1.0], activation: Activation::Relu };
        assert!(DataSpec::new(2, Covariates::Gaussian, t).is_err());
    }
}
