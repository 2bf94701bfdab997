//! Empirical proxies for the feature assumptions: sub-Gaussian scale, small-ball
//! probability, negative moments and the Lipschitz tail.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{featurize, mean_features, sample_weights, whiten, FeatureSpec, Instance, KernelOracle};
use crate::rng::{self, label};

pub const MIN_SMALLBALL_SAMPLES: usize = 1_000;
pub const MIN_DIRECTIONS: usize = 100;
pub const MIN_MOMENT_SAMPLES: usize = 1_000;

/// `n x (directions + n)`: random unit columns followed by the coordinate axes.
fn direction_matrix(n: usize, directions: usize, seed: u64) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(n, directions + n);
    for c in 0..directions {
        let mut r = rng::stream(seed, &[label::DIRECTIONS, c as u64]);
        let mut col: DVector<f64> = DVector::from_fn(n, |_, _| r.sample(StandardNormal));
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        v.set_column(c, &col);
    }
    for i in 0..n {
        v[(i, directions + i)] = 1.0;
    }
    v
}

fn max_small_ball(proj: &DMatrix<f64>, eta: f64) -> f64 {
    let m = proj.nrows() as f64;
    proj.column_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| c.iter().filter(|v| v.abs() <= eta).count() as f64 / m)
        .reduce(|| 0.0, f64::max)
}

/// `max_v P_hat(|<v, psi>| <= eta)` over random unit directions and the coordinate axes.
/// Rows of `psi_samples` are independent draws of `psi`.
pub fn smallball_estimate(psi_samples: &DMatrix<f64>, eta: f64, directions: usize, seed: u64) -> Result<f64> {
    if psi_samples.nrows() < MIN_SMALLBALL_SAMPLES {
        return Err(Error::TooFewSamples { got: psi_samples.nrows(), need: MIN_SMALLBALL_SAMPLES });
    }
    if directions < MIN_DIRECTIONS {
        return Err(Error::TooFewSamples { got: directions, need: MIN_DIRECTIONS });
    }
    let v = direction_matrix(psi_samples.ncols(), directions, seed);
    Ok(max_small_ball(&(psi_samples * v), eta))
}

/// `E|G|^q = (q - 1)!!` for even `q`.
fn gaussian_abs_moment(q: u32) -> f64 {
    (1..q).step_by(2).map(f64::from).product()
}

/// Moment-ratio sub-Gaussian scale `max_{q in 2,4,6,8} (E|X|^q / E|G|^q)^{1/q}`, clipped below at 1.
///
/// A standard Gaussian gives 1 up to sampling error; this is an estimate, not a bound.
pub fn subgaussian_proxy(samples: &[f64], mean_removed: bool) -> Result<f64> {
    if samples.len() < MIN_MOMENT_SAMPLES {
        return Err(Error::TooFewSamples { got: samples.len(), need: MIN_MOMENT_SAMPLES });
    }
    let m = samples.len() as f64;
    let shift = if mean_removed { samples.iter().sum::<f64>() / m } else { 0.0 };
    let mut sums = [0.0f64; 4];
    for &s in samples {
        let x2 = (s - shift) * (s - shift);
        let mut p = x2;
        for acc in sums.iter_mut() {
            *acc += p;
            p *= x2;
        }
    }
    let tau = sums
        .iter()
        .zip([2u32, 4, 6, 8])
        .map(|(s, q)| (s / m / gaussian_abs_moment(q)).powf(1.0 / f64::from(q)))
        .fold(1.0, f64::max);
    Ok(tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub r: f64,
    /// `max_v E|<v, psi>|^r` over the sampled directions.
    pub value: f64,
    /// `value / eta_hat^r`, the constant `C_r` implied at the reported `eta_hat`.
    #[serde(with = "super::nonfinite")]
    pub implied_c_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTail {
    /// `L` such that `L(w) = L ||w||_2`.
    pub constant: f64,
    pub mean: f64,
    pub q99: f64,
    pub max: f64,
    /// Moment-ratio scale of the centered `L(w)`.
    pub tau_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub tau_hat: f64,
    /// Largest dyadic `eta <= 1` whose small-ball probability is at most `smallball_threshold`.
    pub eta_hat: f64,
    pub smallball_prob: f64,
    pub smallball_threshold: f64,
    /// `None` for custom activations, which carry no Lipschitz constant.
    pub lipschitz_tail: Option<LipschitzTail>,
    /// Negative moments `max_v E|<v, psi>|^r`, one per exponent in `r_grid`.
    pub inverse_moments: Vec<MomentEstimate>,
    pub samples: usize,
    pub directions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssumptionOptions {
    pub samples: usize,
    pub directions: usize,
    pub smallball_threshold: f64,
    pub r_grid: Vec<f64>,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        Self { samples: 10_000, directions: 200, smallball_threshold: 0.25, r_grid: vec![-0.25, -0.5, -0.75] }
    }
}

const ETA_GRID_DEPTH: i32 = 30;

/// Audit the feature assumptions on the training covariates of `inst`.
///
/// Draws `opts.samples` weights, whitens the randomized feature vectors with the
/// oracle and measures projections along random and axis directions.
pub fn assumption_report(
    spec: &FeatureSpec,
    inst: &Instance,
    oracle: &KernelOracle,
    opts: &AssumptionOptions,
    seed: u64,
) -> Result<AssumptionReport> {
    if opts.samples < MIN_SMALLBALL_SAMPLES {
        return Err(Error::TooFewSamples { got: opts.samples, need: MIN_SMALLBALL_SAMPLES });
    }
    if opts.directions < MIN_DIRECTIONS {
        return Err(Error::TooFewSamples { got: opts.directions, need: MIN_DIRECTIONS });
    }
    if opts.r_grid.iter().any(|r| !(*r > -1.0 && *r < 0.0)) {
        return Err(Error::Config("moment exponents must lie in (-1, 0)".into()));
    }
    let audit_seed = rng::derive(seed, &[label::REFERENCE]);
    let w = sample_weights(spec, inst.d(), opts.samples, audit_seed)?;
    let phi = featurize(spec, &inst.x, &w, audit_seed)?;
    let psi = whiten(oracle, &phi)?;
    let v = direction_matrix(inst.n(), opts.directions, seed);
    let proj = psi.tr_mul(&v);

    let columns: Vec<Vec<f64>> = proj.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut tau_hat = columns
        .par_iter()
        .map(|c| subgaussian_proxy(c, false))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0, f64::max);
    let bar = mean_features(spec, &inst.x, &w)?;
    for row in bar.row_iter() {
        let r: Vec<f64> = row.iter().copied().collect();
        tau_hat = tau_hat.max(subgaussian_proxy(&r, false)?);
    }

    let mut eta_hat = 0.0;
    let mut smallball_prob = max_small_ball(&proj, 0.0);
    for k in 0..=ETA_GRID_DEPTH {
        let eta = 2f64.powi(-k);
        let prob = max_small_ball(&proj, eta);
        if prob <= opts.smallball_threshold {
            eta_hat = eta;
            smallball_prob = prob;
            break;
        }
    }

    let inverse_moments = opts
        .r_grid
        .iter()
        .map(|&r| {
            let value = columns
                .par_iter()
                .map(|c| c.iter().map(|x| x.abs().powf(r)).sum::<f64>() / c.len() as f64)
                .reduce(|| 0.0, f64::max);
            let implied_c_r = if eta_hat > 0.0 { value / eta_hat.powf(r) } else { f64::INFINITY };
            MomentEstimate { r, value, implied_c_r }
        })
        .collect();

    let lipschitz_tail = match spec.activation.lipschitz() {
        Some(l) => {
            let mut lw: Vec<f64> = w.row_iter().map(|r| l * r.norm()).collect();
            let tau = subgaussian_proxy(&lw, true)?;
            lw.sort_by(f64::total_cmp);
            let m = lw.len();
            Some(LipschitzTail {
                constant: l,
                mean: lw.iter().sum::<f64>() / m as f64,
                q99: lw[((0.99 * m as f64) as usize).min(m - 1)],
                max: lw[m - 1],
                tau_hat: tau,
            })
        }
        None => None,
    };

    Ok(AssumptionReport {
        tau_hat,
        eta_hat,
        smallball_prob,
        smallball_threshold: opts.smallball_threshold,
        lipschitz_tail,
        inverse_moments,
        samples: opts.samples,
        directions: opts.directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{kernel_matrix, sample_data, Activation, DataSpec, KernelMethod};

    fn gaussian(m: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[7]);
        (0..m).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn subgaussian_examples() {
        let t = subgaussian_proxy(&gaussian(1_000_000, 1), false).unwrap();
        assert!((1.0..=1.3).contains(&t), "{t}");
        let rad: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = subgaussian_proxy(&rad, false).unwrap();
        assert!((1.0..=1.2).contains(&t), "{t}");
        assert_eq!(subgaussian_proxy(&vec![0.0; 2000], true).unwrap(), 1.0);
        let scaled: Vec<f64> = gaussian(100_000, 2).iter().map(|v| 3.0 * v).collect();
        let t = subgaussian_proxy(&scaled, false).unwrap();
        assert!((t - 3.0).abs() < 0.15, "{t}");
        assert!(matches!(subgaussian_proxy(&[1.0; 999], false), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn smallball_examples() {
        let n = 6;
        let g = gaussian(20_000 * n, 3);
        let psi = DMatrix::from_row_slice(20_000, n, &g);
        assert_eq!(smallball_estimate(&psi, 0.0, 100, 1).unwrap(), 0.0);
        let zero = DMatrix::zeros(1000, n);
        assert_eq!(smallball_estimate(&zero, 0.01, 100, 1).unwrap(), 1.0);
        let p = smallball_estimate(&psi, 0.1, 100, 1).unwrap();
        assert!((0.0797 - 0.01..=0.12).contains(&p), "{p}");
        let mut last = 1.0;
        for eta in [1.0, 0.5, 0.2, 0.1, 0.05, 0.0] {
            let q = smallball_estimate(&psi, eta, 100, 1).unwrap();
            assert!(q <= last);
            last = q;
        }
        assert!(smallball_estimate(&psi.rows(0, 999).into_owned(), 0.1, 100, 1).is_err());
        assert!(smallball_estimate(&psi, 0.1, 99, 1).is_err());
    }

    #[test]
    fn latent_linear_report_is_gaussian_like() {
        let ds = DataSpec::ridge(8, Activation::Relu);
        let inst = sample_data(&ds, 10, 1).unwrap();
        let spec = FeatureSpec::latent_linear(1.0);
        let o = kernel_matrix(&spec, &inst.x, KernelMethod::LatentLinearClosedForm, 0).unwrap();
        let rep = assumption_report(&spec, &inst, &o, &AssumptionOptions::default(), 5).unwrap();
        assert!(rep.tau_hat >= 1.0 && rep.tau_hat < 1.3, "{rep:?}");
        assert!((0.0..=1.0).contains(&rep.smallball_prob));
        assert!(rep.eta_hat >= 0.125, "{rep:?}");
        // E|G|^r = 2^{r/2} Gamma((r+1)/2) / sqrt(pi): 1.2264 at r = -1/4 and 1.7200 at
        // r = -1/2. The latter estimator has infinite variance, so its bound is loose.
        let m = &rep.inverse_moments[0];
        assert!(m.value > 1.2 && m.value < 1.28, "{m:?}");
        let m = &rep.inverse_moments[1];
        assert!(m.value > 1.6 && m.value < 2.4, "{m:?}");
        let lt = rep.lipschitz_tail.unwrap();
        assert!(lt.mean > 0.8 && lt.mean < 1.2);
        let json = serde_json::to_string(&rep.inverse_moments).unwrap();
        assert!(json.contains("implied_c_r"));
    }
}
