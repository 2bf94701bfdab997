//! Hermite expansion of an activation under the standard Gaussian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Activation;

/// Tails below this fraction of `E[sigma(G)^2]` are cancellation noise and reported as zero.
const TAIL_NOISE_FLOOR: f64 = 1e-12;
/// Largest allowed change of a normalized coefficient when the order is doubled.
const QUAD_CHANGE_TOL: f64 = 1e-8;
const LEGENDRE_PER_PANEL: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteProfile {
    /// `mu_k = E[sigma(G) He_k(G)]` for `k = 0..=m_max`.
    pub mu: Vec<f64>,
    /// `kappa_{>m} = sum_{k > m} mu_k^2 / k!` for `m = 0..m_max`, from Parseval.
    pub tails: Vec<f64>,
    /// `E[sigma(G)^2]`.
    pub second_moment: f64,
    /// `kappa_{>m_max}`: mass not captured by the listed coefficients.
    pub truncation_error: f64,
}

impl HermiteProfile {
    pub fn m_max(&self) -> usize {
        self.mu.len() - 1
    }
}

/// Gauss rule from a symmetric tridiagonal Jacobi matrix with zero diagonal.
fn golub_welsch(off: impl Fn(usize) -> f64, n: usize, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = off(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `(h_n(x), h_{n-1}(x))` for the normalized Hermite polynomials.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Newton refinement of an eigenvalue node, with the weight `1 / (n h_{n-1}(x)^2)`.
fn polish_hermite_node(n: usize, x: &mut f64, w: &mut f64) {
    let mut t = *x;
    for _ in 0..3 {
        let (hn, hm) = hermite_pair(n, t);
        let step = hn / ((n as f64).sqrt() * hm);
        if !step.is_finite() {
            return;
        }
        t -= step;
    }
    let (_, hm) = hermite_pair(n, t);
    let wt = 1.0 / (n as f64 * hm * hm);
    if wt.is_finite() && (t - *x).abs() < 1e-6 * (1.0 + x.abs()) {
        *x = t;
        *w = wt;
    }
}

/// Nodes and weights integrating against the standard Gaussian density.
fn gaussian_rule(act: &Activation, order: usize, m_max: usize) -> (Vec<f64>, Vec<f64>) {
    let kinks = act.kinks();
    if kinks.is_empty() {
        let (mut xs, mut ws) = golub_welsch(|k| (k as f64).sqrt(), order, 1.0);
        for (x, w) in xs.iter_mut().zip(ws.iter_mut()) {
            polish_hermite_node(order, x, w);
        }
        return (xs, ws);
    }
    // Composite Gauss-Legendre on [-L, L] with panel edges at the kinks;
    // plain Gauss-Hermite converges only algebraically across a kink.
    let half = 8.0 + 2.0 * ((m_max + 1) as f64).sqrt();
    let (gl_x, gl_w) = golub_welsch(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt(), LEGENDRE_PER_PANEL, 2.0);
    let mut edges = vec![-half];
    edges.extend(kinks.iter().copied().filter(|k| k.abs() < half));
    edges.push(half);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let (mut xs, mut ws) = (Vec::new(), Vec::new());
    for seg in edges.windows(2) {
        let len = seg[1] - seg[0];
        let panels = ((order as f64 * len / (2.0 * half)).round() as usize).max(1);
        let h = len / panels as f64;
        for p in 0..panels {
            let mid = seg[0] + (p as f64 + 0.5) * h;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let t = mid + 0.5 * h * x;
                xs.push(t);
                ws.push(0.5 * h * w * norm * (-0.5 * t * t).exp());
            }
        }
    }
    (xs, ws)
}

/// Normalized coefficients `c_k = E[sigma(G) h_k(G)]`, `h_k = He_k / sqrt(k!)`,
/// together with `E[sigma(G)^2]`.
fn normalized_coefficients(act: &Activation, order: usize, m_max: usize) -> (Vec<f64>, f64) {
    let (xs, ws) = gaussian_rule(act, order, m_max);
    let mut c = vec![0.0; m_max + 1];
    let mut second = 0.0;
    for (&x, &w) in xs.iter().zip(&ws) {
        if w == 0.0 {
            continue;
        }
        let s = act.apply(x);
        second += w * s * s;
        let (mut prev, mut cur) = (0.0, 1.0);
        for (k, ck) in c.iter_mut().enumerate() {
            *ck += w * s * cur;
            let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
            prev = cur;
            cur = next;
        }
    }
    (c, second)
}

/// Hermite coefficients `mu_k` and Parseval tails of `sigma` up to `m_max`.
///
/// Integrates with `quad_order` and `2 * quad_order` and fails if any normalized
/// coefficient `mu_k / sqrt(k!)` moves by more than `1e-8`.
pub fn hermite_coefficients(act: &Activation, m_max: usize, quad_order: usize) -> Result<HermiteProfile> {
    if quad_order < 2 * m_max + 20 {
        return Err(Error::InvalidDim(format!("quad_order must be >= 2 m_max + 20 = {}", 2 * m_max + 20)));
    }
    let (c, second) = normalized_coefficients(act, quad_order, m_max);
    let (c2, second2) = normalized_coefficients(act, 2 * quad_order, m_max);
    for (k, (a, b)) in c.iter().zip(&c2).enumerate() {
        let change = (a - b).abs();
        if !(change <= QUAD_CHANGE_TOL) {
            return Err(Error::QuadratureUnderResolved { k, change });
        }
    }
    if !((second - second2).abs() <= QUAD_CHANGE_TOL * second2.max(1.0)) {
        return Err(Error::QuadratureUnderResolved { k: 0, change: (second - second2).abs() });
    }

    let mut log_fact = 0.0;
    let mu = c2
        .iter()
        .enumerate()
        .map(|(k, ck)| {
            if k > 0 {
                log_fact += (k as f64).ln();
            }
            ck * (0.5 * log_fact).exp()
        })
        .collect();

    let floor = TAIL_NOISE_FLOOR * second2;
    let mut remaining = second2;
    let mut running = f64::INFINITY;
    let mut all = Vec::with_capacity(m_max + 1);
    for ck in &c2 {
        remaining -= ck * ck;
        let t = if remaining <= floor { 0.0 } else { remaining };
        running = running.min(t);
        all.push(running);
    }
    let truncation_error = all.pop().unwrap_or(0.0);
    Ok(HermiteProfile { mu, tails: all, second_moment: second2, truncation_error })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteCondition {
    pub ell: usize,
    pub c0: f64,
    /// Smallest `m > ell` satisfying the tail condition, or `None` up to `m_max - 1`.
    pub m: Option<usize>,
    /// `4 kappa_{>m} / kappa_{>ell}` at that `m`; zero when the tail above `ell` vanishes.
    pub eta_star: Option<f64>,
    pub searched_up_to: usize,
}

/// Smallest `m > ell` with `kappa_{>m} <= kappa_{>ell} * min((c0 m)^{-(2m+1)}, 1/4)`.
pub fn hermite_condition_check(profile: &HermiteProfile, ell: usize, c0: f64) -> Result<HermiteCondition> {
    let have = profile.tails.len();
    if have < ell + 2 {
        return Err(Error::InsufficientTail { need: ell + 2, have });
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::Config(format!("C0 must be positive, got {c0}")));
    }
    let base = profile.tails[ell];
    let found = (ell + 1..have).find(|&m| {
        let log_factor = -((2 * m + 1) as f64) * (c0 * m as f64).ln();
        let factor = log_factor.exp().min(0.25);
        profile.tails[m] <= base * factor
    });
    let eta_star = found.map(|m| if base > 0.0 { 4.0 * profile.tails[m] / base } else { 0.0 });
    Ok(HermiteCondition { ell, c0, m: found, eta_star, searched_up_to: have - 1 })
}
