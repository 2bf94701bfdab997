//! Small dense linear-algebra helpers on top of nalgebra, plus a deterministic
//! parallel reduction used by the Monte Carlo loops.

use std::ops::{AddAssign, Range};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

/// Chunk length for data-parallel reductions. Fixed so that the summation tree,
/// and therefore the floating-point result, does not depend on the thread count.
pub const REDUCE_CHUNK: usize = 2048;

/// Sum `f` over fixed-size chunks of `0..len` in parallel, then fold the partial
/// results sequentially in chunk order.
pub fn chunked_sum<T, F>(len: usize, chunk: usize, zero: T, f: F) -> T
where
    T: Send + Clone + for<'a> AddAssign<&'a T>,
    F: Fn(Range<usize>) -> T + Sync,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let partials: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect();
    let mut acc = zero;
    for p in &partials {
        acc += p;
    }
    acc
}

/// Symmetrize in place: `A <- (A + A^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(a.clone()).eigenvalues
}

pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).min()
}

pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).max()
}

/// `A^{-1/2}` and `A^{1/2}` for a symmetric PSD matrix, with eigenvalues clipped
/// below at `rel_floor * lambda_max`. Returns `(inv_sqrt, sqrt, floor_used)`.
pub fn inv_sqrt_floored(a: &DMatrix<f64>, rel_floor: f64) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.max().max(0.0);
    let floor = (rel_floor * lmax).max(f64::MIN_POSITIVE);
    let q = &eig.eigenvectors;
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut sq = DMatrix::zeros(n, n);
    for k in 0..n {
        let ev = eig.eigenvalues[k].max(floor);
        let col = q.column(k);
        let outer = col * col.transpose();
        inv += &outer * (1.0 / ev.sqrt());
        sq += &outer * ev.sqrt();
    }
    symmetrize(&mut inv);
    symmetrize(&mut sq);
    (inv, sq, floor)
}

/// Solve `A x = b` for symmetric positive definite `A`, adding `ridge * I` first.
/// Falls back to LU if Cholesky fails.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(b));
    }
    m.lu().solve(b)
}

/// `sqrt(v^T A v)`, clipped at zero.
pub fn a_norm(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v)).max(0.0).sqrt()
}
