use std::ffi::{CStr, CString};
use std::ptr;

use mci_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mci_last_error()) }.to_string_lossy().into_owned()
}

/// `n x N` row-major features with full row rank.
fn features(n: usize, nf: usize) -> Vec<f64> {
    (0..n * nf).map(|k| ((k * 7919 % 113) as f64 / 113.0 - 0.5) + if k / nf == k % nf { 1.0 } else { 0.0 }).collect()
}

#[test]
fn p2_solve_interpolates_and_reports_lengths() {
    let (n, nf) = (4, 10);
    let phi = features(n, nf);
    let y = [1.0, -0.5, 0.25, 2.0];
    let mut pen = ptr::null_mut();
    assert_eq!(unsafe { mci_penalty_new(2.0, &mut pen) }, MciStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { mci_solve(phi.as_ptr(), n, nf, y.as_ptr(), pen, &mut sol) }, MciStatus::Ok);

    let (mut conv, mut iters, mut obj, mut res) = (false, 0usize, 0.0, 0.0);
    assert_eq!(unsafe { mci_solution_info(sol, &mut conv, &mut iters, &mut obj, &mut res) }, MciStatus::Ok);
    assert!(conv && res < 1e-8 && obj > 0.0);

    let mut len = 0;
    assert_eq!(unsafe { mci_solution_coefficients(sol, ptr::null_mut(), 0, &mut len) }, MciStatus::Ok);
    assert_eq!(len, nf);
    let mut a = vec![0.0; nf];
    assert_eq!(unsafe { mci_solution_coefficients(sol, a.as_mut_ptr(), 3, ptr::null_mut()) }, MciStatus::BufferTooSmall);
    assert_eq!(unsafe { mci_solution_coefficients(sol, a.as_mut_ptr(), nf, ptr::null_mut()) }, MciStatus::Ok);
    for i in 0..n {
        let fit: f64 = (0..nf).map(|j| phi[i * nf + j] * a[j]).sum::<f64>() / nf as f64;
        assert!((fit - y[i]).abs() < 1e-8);
    }
    let mut lam = vec![0.0; n];
    assert_eq!(unsafe { mci_solution_dual(sol, lam.as_mut_ptr(), n, &mut len) }, MciStatus::Ok);
    assert_eq!(len, n);
    unsafe {
        mci_solution_free(sol);
        mci_penalty_free(pen);
    }
}

#[test]
fn l1_solve_has_no_dual() {
    let (n, nf) = (3, 8);
    let phi = features(n, nf);
    let y = [0.3, -0.2, 0.9];
    let mut pen = ptr::null_mut();
    assert_eq!(unsafe { mci_penalty_new(1.0, &mut pen) }, MciStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { mci_solve(phi.as_ptr(), n, nf, y.as_ptr(), pen, &mut sol) }, MciStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { mci_solution_dual(sol, ptr::null_mut(), 0, &mut len) }, MciStatus::InvalidArgument);
    assert!(last_error().contains("p = 1"));
    unsafe {
        mci_solution_free(sol);
        mci_penalty_free(pen);
    }
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    let mut pen = ptr::null_mut();
    assert_eq!(unsafe { mci_penalty_new(0.5, &mut pen) }, MciStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { mci_penalty_new(2.0, ptr::null_mut()) }, MciStatus::NullPointer);
    let mut sol = ptr::null_mut();
    assert_eq!(
        unsafe { mci_solve(ptr::null(), 1, 1, ptr::null(), ptr::null(), &mut sol) },
        MciStatus::NullPointer
    );
    assert_eq!(unsafe { mci_solution_info(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, MciStatus::NullPointer);
    unsafe {
        mci_penalty_free(ptr::null_mut());
        mci_solution_free(ptr::null_mut());
    }
}

#[test]
fn run_experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let exp = CString::new("solve").unwrap();
    let cfg = CString::new(r#"{"d": 3, "n": 10, "N_list": [64], "M_test": 200}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let st = unsafe { mci_run_experiment(exp.as_ptr(), cfg.as_ptr(), out.as_ptr()) };
    assert_eq!(st, MciStatus::Ok, "{}", last_error());
    assert!(dir.path().join("rows.csv").exists() && dir.path().join("result.json").exists());

    let bogus = CString::new("nope").unwrap();
    assert_eq!(unsafe { mci_run_experiment(bogus.as_ptr(), ptr::null(), ptr::null()) }, MciStatus::InvalidArgument);
    let bad_cfg = CString::new(r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(unsafe { mci_run_experiment(exp.as_ptr(), bad_cfg.as_ptr(), out.as_ptr()) }, MciStatus::InvalidArgument);
}

#[test]
fn version_is_nonempty() {
    assert!(!unsafe { CStr::from_ptr(mci_version()) }.to_bytes().is_empty());
}

/// Compile and run a small C program against the generated header and static library.
#[test]
fn header_compiles_and_links_from_c() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/mci.h");
    assert!(header.exists());
    if std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no C compiler");
        return;
    }
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let built = std::process::Command::new(cargo)
        .args(["build", "--release", "-p", "mci-ffi", "--lib"])
        .current_dir(root)
        .status()
        .unwrap();
    assert!(built.success(), "static library build failed");
    let lib = root.join("../../target/release/libmci_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        r#"#include "mci.h"
#include <stdio.h>
int main(void) {
    double phi[6] = {1, 0, 0.5, 0, 1, -0.5};
    double y[2] = {0.2, -0.4};
    MciPenalty *pen = NULL;
    MciSolution *sol = NULL;
    if (mci_penalty_new(1.5, &pen) != MCI_STATUS_OK) return 1;
    if (mci_solve(phi, 2, 3, y, pen, &sol) != MCI_STATUS_OK) return 2;
    bool conv = false;
    double res = 1;
    mci_solution_info(sol, &conv, NULL, NULL, &res);
    mci_solution_free(sol);
    mci_penalty_free(pen);
    return (conv && res < 1e-8) ? 0 : 3;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("t");
    let st = std::process::Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success(), "C compile failed");
    assert!(std::process::Command::new(&exe).status().unwrap().success());
}
