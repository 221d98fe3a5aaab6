use std::ffi::{CStr, CString};
use std::ptr;

use nonsmooth_belief_ffi::*;

fn last_error() -> String {
    let p = nsb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn belief(mean: &[f64], cov: &[f64]) -> *mut NsbBelief {
    let mut b = ptr::null_mut();
    let s = unsafe { nsb_belief_new(mean.len(), mean.as_ptr(), cov.as_ptr(), &mut b) };
    assert_eq!(s, NsbStatus::Ok);
    b
}

fn moments(b: *const NsbBelief) -> (Vec<f64>, Vec<f64>) {
    let n = unsafe { nsb_belief_dim(b) };
    let (mut m, mut c) = (vec![0.0; n], vec![0.0; n * n]);
    unsafe {
        assert_eq!(nsb_belief_mean(b, m.as_mut_ptr(), m.len()), NsbStatus::Ok);
        assert_eq!(nsb_belief_cov(b, c.as_mut_ptr(), c.len()), NsbStatus::Ok);
    }
    (m, c)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(nsb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn belief_accessors_return_row_major_data() {
    let b = belief(&[1.0, 2.0], &[2.0, 0.5, 0.5, 1.0]);
    assert_eq!(moments(b), (vec![1.0, 2.0], vec![2.0, 0.5, 0.5, 1.0]));
    let mut short = [0.0; 3];
    let s = unsafe { nsb_belief_cov(b, short.as_mut_ptr(), short.len()) };
    assert_eq!(s, NsbStatus::InvalidArgument);
    assert!(last_error().contains("4 needed"));
    unsafe { nsb_belief_free(b) };
}

#[test]
fn failures_set_status_and_message() {
    let mut b = ptr::null_mut();
    let s = unsafe { nsb_belief_new(1, ptr::null(), [1.0].as_ptr(), &mut b) };
    assert_eq!(s, NsbStatus::NullPointer);
    assert!(b.is_null());
    assert!(last_error().contains("mean"));

    let s = unsafe { nsb_belief_new(1, [0.0].as_ptr(), [-1.0].as_ptr(), &mut b) };
    assert_eq!(s, NsbStatus::NotPsd);
    assert!(b.is_null());

    let mut m = ptr::null_mut();
    let name = CString::new("no_such_model").unwrap();
    assert_eq!(unsafe { nsb_model_builtin(name.as_ptr(), &mut m) }, NsbStatus::InvalidArgument);
    assert!(last_error().contains("no_such_model"));

    let zero = [0.0; 2];
    let eye = [1.0, 0.0, 0.0, 1.0];
    let s = unsafe {
        nsb_model_affine(
            2,
            eye.as_ptr(),
            eye.as_ptr(),
            zero.as_ptr(),
            zero.as_ptr(),
            zero.as_ptr(),
            zero.as_ptr(),
            &mut m,
        )
    };
    assert_eq!(s, NsbStatus::Degenerate);

    unsafe {
        nsb_belief_free(ptr::null_mut());
        nsb_model_free(ptr::null_mut());
        assert_eq!(nsb_belief_dim(ptr::null()), 0);
    }
}

/// Identical affine modes have no switch, so the moments follow the linear
/// flow `μ(t) = e^{-t/2} μ0`, `Σ(t) = e^{-t} Σ0` exactly.
#[test]
fn propagation_without_a_jump_is_the_linear_flow() {
    let a = [-0.5, 0.0, 0.0, -0.5];
    let zero = [0.0; 2];
    let g = [1.0, 1.0];
    let mut m = ptr::null_mut();
    let s = unsafe {
        nsb_model_affine(2, a.as_ptr(), a.as_ptr(), zero.as_ptr(), zero.as_ptr(), g.as_ptr(), zero.as_ptr(), &mut m)
    };
    assert_eq!(s, NsbStatus::Ok);
    let b0 = belief(&[1.0, -0.5], &[0.2, 0.05, 0.05, 0.1]);
    let mut b1 = ptr::null_mut();
    let s = unsafe { nsb_propagate(m, b0, ptr::null(), 0, 2.0, 200, &mut b1) };
    assert_eq!(s, NsbStatus::Ok, "{}", last_error());
    let (mu, cov) = moments(b1);
    let e = (-1.0f64).exp();
    assert!((mu[0] - e).abs() < 1e-9 && (mu[1] + 0.5 * e).abs() < 1e-9);
    for (c, c0) in cov.iter().zip([0.2, 0.05, 0.05, 0.1]) {
        assert!((c - c0 * e * e).abs() < 1e-9);
    }
    unsafe {
        nsb_belief_free(b0);
        nsb_belief_free(b1);
        nsb_model_free(m);
    }
}

#[test]
fn propagation_agrees_with_sampling_before_the_crossing() {
    let name = CString::new("crossing1d").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nsb_model_builtin(name.as_ptr(), &mut m) }, NsbStatus::Ok);
    assert_eq!(unsafe { nsb_model_state_dim(m) }, 1);
    assert_eq!(unsafe { nsb_model_control_dim(m) }, 0);
    let mut b0 = ptr::null_mut();
    assert_eq!(unsafe { nsb_model_initial_belief(m, &mut b0) }, NsbStatus::Ok);
    let (mut exact, mut sampled) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(nsb_propagate(m, b0, ptr::null(), 0, 0.5, 50, &mut exact), NsbStatus::Ok);
        assert_eq!(
            nsb_monte_carlo(m, b0, ptr::null(), 0, 0.5, 0.01, 4000, 7, &mut sampled),
            NsbStatus::Ok
        );
    }
    let ((mu, var), (mu_s, var_s)) = (moments(exact), moments(sampled));
    // Five standard errors of the sample mean and variance.
    let n = 4000.0f64;
    assert!((mu[0] - mu_s[0]).abs() < 5.0 * (var[0] / n).sqrt());
    assert!((var[0] - var_s[0]).abs() < 5.0 * var[0] * (2.0 / (n - 1.0)).sqrt());

    let u = [1.0];
    let s = unsafe { nsb_propagate(m, b0, u.as_ptr(), 1, 0.5, 50, &mut exact) };
    assert_eq!(s, NsbStatus::InvalidArgument);
    unsafe {
        nsb_belief_free(b0);
        nsb_belief_free(exact);
        nsb_belief_free(sampled);
        nsb_model_free(m);
    }
}

#[test]
fn experiment_runner_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let name = CString::new("crossing1d-error").unwrap();
    let s = unsafe { nsb_run_experiment(name.as_ptr(), ptr::null(), 3, out.as_ptr()) };
    assert_eq!(s, NsbStatus::Ok);
    assert!(dir.path().join("trace.csv").is_file());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"]["master"], 3);

    let other = CString::new(r#"{"experiment": "crossing1d", "model": "crossing1d"}"#).unwrap();
    let s = unsafe { nsb_run_experiment(name.as_ptr(), other.as_ptr(), 3, out.as_ptr()) };
    assert_eq!(s, NsbStatus::InvalidArgument);
    let bogus = CString::new("bogus").unwrap();
    let s = unsafe { nsb_run_experiment(bogus.as_ptr(), ptr::null(), 0, out.as_ptr()) };
    assert_eq!(s, NsbStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
}

/// The generated header must compile as C when a compiler is available.
#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/nonsmooth_belief.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
