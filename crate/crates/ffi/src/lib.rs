//! C ABI over `mci-core`.
//!
//! Every fallible call returns an [`MciStatus`]; on anything but `MCI_STATUS_OK`
//! a description is available from [`mci_last_error`] on the same thread.
//! Handles are opaque, created by `*_new`/`mci_solve` and released by the
//! matching `*_free`. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mci_core::harness::{persist, run, Experiment, ExperimentConfig};
use mci_core::solver::{primal_from_dual, solve_dual, solve_l1, LpOptions};
use mci_core::{Error, PenaltySpec, SolverOptions};
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MciStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotConverged = 3,
    Singular = 4,
    Infeasible = 5,
    Io = 6,
    SchemaMismatch = 7,
    /// The experiment ran and wrote its rows, but at least one row failed.
    RowFailures = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

impl From<&Error> for MciStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::NotConverged { .. } => Self::NotConverged,
            Error::SingularKernel | Error::NotPsd { .. } => Self::Singular,
            Error::Infeasible(_) => Self::Infeasible,
            Error::Io(_) => Self::Io,
            Error::SchemaMismatch(_) | Error::Csv(_) | Error::Json(_) => Self::SchemaMismatch,
            _ => Self::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (MciStatus, String)>) -> MciStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MciStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MciStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (MciStatus, String) {
    (MciStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (MciStatus, String) {
    (MciStatus::NullPointer, format!("{what} is null"))
}

/// Penalty `rho(x) = |x|^p / p`, or `|x|` for `p = 1`.
pub struct MciPenalty(PenaltySpec);

/// Result of a finite-width solve.
pub struct MciSolution {
    a: DVector<f64>,
    lambda: Option<DVector<f64>>,
    objective: f64,
    residual: f64,
    iters: usize,
    converged: bool,
}

/// Message for the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn mci_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mci_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mci_penalty_new(p: f64, out: *mut *mut MciPenalty) -> MciStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = if p == 1.0 { PenaltySpec::l1() } else { PenaltySpec::pnorm(p).map_err(core_err)? };
        // SAFETY: checked non-null; caller guarantees validity.
        unsafe { *out = Box::into_raw(Box::new(MciPenalty(spec))) };
        Ok(())
    })
}

/// # Safety
/// `pen` must be null or a handle from [`mci_penalty_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mci_penalty_free(pen: *mut MciPenalty) {
    if !pen.is_null() {
        // SAFETY: caller guarantees the handle came from Box::into_raw.
        drop(unsafe { Box::from_raw(pen) });
    }
}

/// Minimum-penalty interpolation of `y` by `(1/N) Phi a`.
///
/// `phi` is `n x n_features` row-major and `y` has length `n`. The dual is
/// solved by Newton's method for `p > 1`; `p = 1` goes to the simplex solver.
/// A solve that stops short of tolerance still yields a handle, with
/// `mci_solution_converged` false.
///
/// # Safety
/// `phi` must point to `n * n_features` doubles, `y` to `n` doubles, `pen`
/// must be a live handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mci_solve(
    phi: *const f64,
    n: usize,
    n_features: usize,
    y: *const f64,
    pen: *const MciPenalty,
    out: *mut *mut MciSolution,
) -> MciStatus {
    guard(|| {
        if phi.is_null() || y.is_null() || pen.is_null() || out.is_null() {
            return Err(null("phi, y, pen or out"));
        }
        if n == 0 || n_features == 0 {
            return Err((MciStatus::InvalidArgument, "n and n_features must be positive".into()));
        }
        let len = n.checked_mul(n_features).ok_or((MciStatus::InvalidArgument, "n * n_features overflows".into()))?;
        // SAFETY: caller guarantees the extents.
        let (phi, y, pen) = unsafe {
            (std::slice::from_raw_parts(phi, len), std::slice::from_raw_parts(y, n), &(*pen).0)
        };
        let phi = DMatrix::from_row_slice(n, n_features, phi);
        let y = DVector::from_column_slice(y);
        let sol = if pen.is_l1() {
            let s = solve_l1(&phi, &y, &LpOptions::default()).map_err(core_err)?;
            MciSolution {
                a: s.a,
                lambda: None,
                objective: s.objective_primal,
                residual: s.residual,
                iters: s.iters,
                converged: s.converged,
            }
        } else {
            let d = solve_dual(&phi, &y, pen, &SolverOptions::default(), None).map_err(core_err)?;
            let s = primal_from_dual(&phi, pen, &d).map_err(core_err)?;
            MciSolution {
                a: s.a,
                lambda: Some(d.lambda_hat),
                objective: s.objective_primal,
                residual: s.residual,
                iters: d.iters,
                converged: d.converged,
            }
        };
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(sol)) };
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from [`mci_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mci_solution_free(sol: *mut MciSolution) {
    if !sol.is_null() {
        // SAFETY: caller guarantees the handle came from Box::into_raw.
        drop(unsafe { Box::from_raw(sol) });
    }
}

/// Summary scalars of a solution. Any output pointer may be null.
///
/// # Safety
/// `sol` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mci_solution_info(
    sol: *const MciSolution,
    converged: *mut bool,
    iters: *mut usize,
    objective: *mut f64,
    residual: *mut f64,
) -> MciStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("sol"))?;
        // SAFETY: each output is null or writable.
        unsafe {
            if !converged.is_null() {
                *converged = s.converged;
            }
            if !iters.is_null() {
                *iters = s.iters;
            }
            if !objective.is_null() {
                *objective = s.objective;
            }
            if !residual.is_null() {
                *residual = s.residual;
            }
        }
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, cap: usize, len: *mut usize) -> Result<(), (MciStatus, String)> {
    if !len.is_null() {
        // SAFETY: caller guarantees writability.
        unsafe { *len = src.len() };
    }
    if buf.is_null() {
        return Ok(());
    }
    if cap < src.len() {
        return Err((MciStatus::BufferTooSmall, format!("need {} doubles, have {cap}", src.len())));
    }
    // SAFETY: buf holds at least cap >= src.len() doubles.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Copy the primal coefficients `a` (length `n_features`) into `buf`.
/// With `buf` null only the length is reported through `len`.
///
/// # Safety
/// `sol` must be a live handle, `buf` null or valid for `cap` doubles, `len` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mci_solution_coefficients(
    sol: *const MciSolution,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> MciStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("sol"))?;
        // SAFETY: forwarded caller guarantees.
        unsafe { copy_out(s.a.as_slice(), buf, cap, len) }
    })
}

/// Copy the dual parameter `lambda` (length `n`) into `buf`. Fails with
/// `MCI_STATUS_INVALID_ARGUMENT` for `p = 1`, which has no dual iterate.
///
/// # Safety
/// As for [`mci_solution_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn mci_solution_dual(
    sol: *const MciSolution,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> MciStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("sol"))?;
        let l = s.lambda.as_ref().ok_or((MciStatus::InvalidArgument, "no dual parameter for p = 1".into()))?;
        // SAFETY: forwarded caller guarantees.
        unsafe { copy_out(l.as_slice(), buf, cap, len) }
    })
}

fn experiment_from_name(name: &str) -> Option<Experiment> {
    Some(match name {
        "fig1" => Experiment::Fig1,
        "scaling" => Experiment::Scaling,
        "latent" => Experiment::Latent,
        "audit" => Experiment::Audit,
        "solve" => Experiment::Solve,
        _ => return None,
    })
}

/// Run an experiment (`"solve"`, `"fig1"`, `"scaling"`, `"latent"` or `"audit"`)
/// with an optional JSON config overlay and write `rows.csv` and `result.json`
/// into `out_dir` (or the config's `output_path` when null). Returns
/// `MCI_STATUS_ROW_FAILURES` when some rows failed but output was written.
///
/// # Safety
/// `experiment` must be a NUL-terminated string; `config_json` and `out_dir`
/// null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mci_run_experiment(
    experiment: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> MciStatus {
    let mut row_failures = false;
    let status = guard(|| {
        let bad = |m: &str| (MciStatus::InvalidArgument, m.to_string());
        if experiment.is_null() {
            return Err(null("experiment"));
        }
        // SAFETY: caller guarantees NUL-terminated strings.
        let name = unsafe { CStr::from_ptr(experiment) }.to_str().map_err(|_| bad("experiment is not UTF-8"))?;
        let exp = experiment_from_name(name).ok_or_else(|| bad("unknown experiment"))?;
        let file = if config_json.is_null() {
            None
        } else {
            // SAFETY: as above.
            let text = unsafe { CStr::from_ptr(config_json) }.to_str().map_err(|_| bad("config is not UTF-8"))?;
            Some(serde_json::from_str(text).map_err(|e| core_err(e.into()))?)
        };
        let mut cfg = ExperimentConfig::resolve(exp, file, &[], None).map_err(core_err)?;
        if !out_dir.is_null() {
            // SAFETY: as above.
            let dir = unsafe { CStr::from_ptr(out_dir) }.to_str().map_err(|_| bad("out_dir is not UTF-8"))?;
            cfg.output_path = dir.to_string();
        }
        let result = run(&cfg).map_err(core_err)?;
        persist(&result, Path::new(&cfg.output_path)).map_err(core_err)?;
        row_failures = result.has_row_failures();
        Ok(())
    });
    if status == MciStatus::Ok && row_failures {
        set_error("one or more rows failed; see result.json");
        return MciStatus::RowFailures;
    }
    status
}
