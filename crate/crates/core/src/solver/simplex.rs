//! `minimize sum_j |a_j|  subject to  (1/N) Phi a = y` as the linear program
//!
//! ```text
//! minimize 1^T (a+ + a-)   subject to  M a+ - M a- = y,  a+, a- >= 0,   M = Phi / N
//! ```
//!
//! solved by a dense two-phase revised simplex. The basis inverse is kept
//! explicitly, updated by elementary row operations and refactored periodically.
//! Dantzig pricing is used until the objective stalls, then Bland's rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PrimalSolution;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpOptions {
    /// Iteration cap per phase; `None` means `20 * (rows + columns)`.
    pub max_iters: Option<usize>,
    /// Optimality tolerance on reduced costs.
    pub tol_reduced: f64,
    /// Smallest admissible pivot magnitude.
    pub tol_pivot: f64,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { max_iters: None, tol_reduced: 1e-11, tol_pivot: 1e-9, refactor_every: 50 }
    }
}

struct Tableau<'a> {
    /// `diag(sign) Phi / N`; rows flipped so the right-hand side is nonnegative.
    m: DMatrix<f64>,
    b: DVector<f64>,
    n_struct: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    opts: &'a LpOptions,
    since_refactor: usize,
    pivots: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

impl Tableau<'_> {
    fn rows(&self) -> usize {
        self.m.nrows()
    }

    /// Columns `0..N` are `a+`, `N..2N` are `a-`, `2N..2N+n` are artificials.
    fn column(&self, k: usize) -> DVector<f64> {
        let nf = self.n_struct;
        if k < nf {
            self.m.column(k).into_owned()
        } else if k < 2 * nf {
            -self.m.column(k - nf).into_owned()
        } else {
            let mut e = DVector::zeros(self.rows());
            e[k - 2 * nf] = 1.0;
            e
        }
    }

    fn cost(&self, k: usize, phase: Phase) -> f64 {
        let artificial = k >= 2 * self.n_struct;
        match phase {
            Phase::One => artificial as u8 as f64,
            Phase::Two => (!artificial) as u8 as f64,
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let r = self.rows();
        let mut bmat = DMatrix::zeros(r, r);
        for (i, &k) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.column(k));
        }
        let inv = bmat.try_inverse().ok_or(Error::Infeasible(f64::NAN))?;
        self.xb = &inv * &self.b;
        self.binv = inv;
        self.since_refactor = 0;
        Ok(())
    }

    fn objective(&self, phase: Phase) -> f64 {
        self.basis.iter().zip(self.xb.iter()).map(|(&k, &x)| self.cost(k, phase) * x).sum()
    }

    /// Reduced costs of the structural columns (and artificials in phase one).
    fn reduced_costs(&self, phase: Phase) -> Vec<f64> {
        let cb = DVector::from_iterator(self.rows(), self.basis.iter().map(|&k| self.cost(k, phase)));
        let pi = self.binv.tr_mul(&cb);
        let t = self.m.tr_mul(&pi);
        let nf = self.n_struct;
        let mut d = Vec::with_capacity(2 * nf + self.rows());
        d.extend(t.iter().map(|tj| self.cost(0, phase) - tj));
        d.extend(t.iter().map(|tj| self.cost(0, phase) + tj));
        if phase == Phase::One {
            d.extend(pi.iter().map(|p| 1.0 - p));
        }
        d
    }

    fn pivot(&mut self, row: usize, entering: usize, dir: &DVector<f64>) {
        let piv = dir[row];
        let r = self.rows();
        let prow = self.binv.row(row) / piv;
        let xr = self.xb[row] / piv;
        for i in 0..r {
            if i == row {
                continue;
            }
            let f = dir[i];
            if f != 0.0 {
                let upd = &prow * f;
                let mut ri = self.binv.row_mut(i);
                ri -= upd;
                self.xb[i] -= f * xr;
            }
        }
        self.binv.set_row(row, &prow);
        self.xb[row] = xr;
        self.basis[row] = entering;
        self.since_refactor += 1;
        self.pivots += 1;
    }

    /// Returns `true` when no improving column remains, `false` when `max_iters` ran out.
    fn run(&mut self, phase: Phase, max_iters: usize) -> Result<bool> {
        let mut in_basis = vec![false; 2 * self.n_struct + self.rows()];
        for &k in &self.basis {
            in_basis[k] = true;
        }
        let mut best = self.objective(phase);
        let mut stall = 0usize;
        for _ in 0..max_iters {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let d = self.reduced_costs(phase);
            let bland = stall > 50;
            let mut entering = None;
            let mut most = -self.opts.tol_reduced;
            for (k, &dk) in d.iter().enumerate() {
                if in_basis[k] || (phase == Phase::Two && k >= 2 * self.n_struct) {
                    continue;
                }
                if dk < most {
                    entering = Some(k);
                    if bland {
                        break;
                    }
                    most = dk;
                }
            }
            let Some(q) = entering else {
                return Ok(true);
            };
            let dir = &self.binv * self.column(q);
            let scale = dir.amax().max(1.0);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows() {
                if dir[i] > self.opts.tol_pivot * scale {
                    let ratio = self.xb[i].max(0.0) / dir[i];
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 {
                                true
                            } else if ratio <= lr + 1e-14 {
                                if bland {
                                    self.basis[i] < self.basis[li]
                                } else {
                                    dir[i] > dir[li]
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                // Unbounded direction; cannot happen with nonnegative costs.
                return Err(Error::Infeasible(f64::INFINITY));
            };
            in_basis[self.basis[row]] = false;
            in_basis[q] = true;
            self.pivot(row, q, &dir);
            let obj = self.objective(phase);
            if obj < best - 1e-13 * (1.0 + best.abs()) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
            }
        }
        Ok(false)
    }

    /// Pivot zero-valued artificials out of the basis where a structural column allows it.
    fn expel_artificials(&mut self) {
        let nf = self.n_struct;
        for row in 0..self.rows() {
            if self.basis[row] < 2 * nf {
                continue;
            }
            let brow = self.binv.row(row).transpose();
            let t = self.m.tr_mul(&brow);
            let cand = (0..nf)
                .filter(|&j| !self.basis.contains(&j) && !self.basis.contains(&(j + nf)))
                .max_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs()));
            if let Some(j) = cand {
                if t[j].abs() > self.opts.tol_pivot {
                    let dir = &self.binv * self.column(j);
                    self.pivot(row, j, &dir);
                }
            }
        }
    }
}

/// Minimum-l1 interpolation at finite width. Returns an optimal basic solution,
/// whose support has at most `n` entries.
pub fn solve_l1(phi: &DMatrix<f64>, y: &DVector<f64>, opts: &LpOptions) -> Result<PrimalSolution> {
    let (n, nf) = phi.shape();
    if n != y.len() {
        return Err(Error::DimMismatch(format!("Phi has {n} rows, y has {}", y.len())));
    }
    if nf == 0 || n == 0 {
        return Err(Error::InvalidDim("empty feature matrix".into()));
    }
    if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Phi or y"));
    }
    let mut m = phi / nf as f64;
    let mut b = y.clone();
    for i in 0..n {
        if b[i] < 0.0 {
            b[i] = -b[i];
            let mut r = m.row_mut(i);
            r *= -1.0;
        }
    }
    let max_iters = opts.max_iters.unwrap_or(20 * (n + 2 * nf));
    let mut tab = Tableau {
        m,
        b: b.clone(),
        n_struct: nf,
        basis: (0..n).map(|i| 2 * nf + i).collect(),
        binv: DMatrix::identity(n, n),
        xb: b,
        opts,
        since_refactor: 0,
        pivots: 0,
    };
    let phase_one_done = tab.run(Phase::One, max_iters)?;
    tab.refactor()?;
    let infeas = tab.objective(Phase::One);
    let feas_tol = 1e-9 * (1.0 + y.norm());
    if infeas > feas_tol {
        if !phase_one_done {
            return Err(Error::NotConverged { grad_norm: infeas });
        }
        return Err(Error::Infeasible(infeas));
    }
    tab.expel_artificials();
    tab.refactor()?;
    let optimal = tab.run(Phase::Two, max_iters)?;
    tab.refactor()?;

    let mut a = DVector::zeros(nf);
    for (&k, &x) in tab.basis.iter().zip(tab.xb.iter()) {
        let x = x.max(0.0);
        if k < nf {
            a[k] += x;
        } else if k < 2 * nf {
            a[k - nf] -= x;
        }
    }
    let residual = (phi * &a / nf as f64 - y).norm();
    if residual > feas_tol {
        return Err(Error::Infeasible(residual));
    }
    let objective_primal = a.iter().map(|v| v.abs()).sum();
    Ok(PrimalSolution { a, objective_primal, residual, converged: optimal, iters: tab.pivots })
}
