//! C ABI over the belief propagation library.
//!
//! Handles are opaque; each constructor has a matching `*_free`. Fallible
//! calls return an [`NsbStatus`] and write their result through an
//! out-pointer, which is left untouched on failure. [`nsb_last_error`] then
//! describes the failure. No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nonsmooth_belief::config::{default_config, validate_config_value};
use nonsmooth_belief::experiments::{run_experiment, write_outputs};
use nonsmooth_belief::integrate::{rk4_joint, ControlSchedule, SampleOptions};
use nonsmooth_belief::moments::rhs_pws;
use nonsmooth_belief::montecarlo::{draw_samples, empirical_moments, propagate_cloud};
use nonsmooth_belief::systems::{
    builtin_model, BuiltinModel, GaussianBelief, PiecewiseAffineSystem, PiecewiseSmoothModel,
};
use nonsmooth_belief::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsbStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad dimensions, names, configs or out-of-domain numbers.
    InvalidArgument = 2,
    NotPsd = 3,
    /// Vanishing surface normal, projected variance or sliding denominator.
    Degenerate = 4,
    /// Non-finite values or an exhausted event budget during integration.
    Divergence = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Gaussian belief `N(μ, Σ)`.
pub struct NsbBelief(GaussianBelief);

/// Switched dynamics: a registry model or a user-supplied affine pair.
pub struct NsbModel(ModelKind);

enum ModelKind {
    Builtin(BuiltinModel),
    Affine(PiecewiseAffineSystem),
}

impl NsbModel {
    fn dynamics(&self) -> &dyn PiecewiseSmoothModel {
        match &self.0 {
            ModelKind::Builtin(m) => m.model(),
            ModelKind::Affine(s) => s,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NsbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn status_of(e: &Error) -> NsbStatus {
    match e {
        Error::Domain(_)
        | Error::DimensionMismatch(_)
        | Error::UnknownModel(_)
        | Error::UnknownExperiment(_)
        | Error::Config(_)
        | Error::Json(_) => NsbStatus::InvalidArgument,
        Error::NotPsd { .. } => NsbStatus::NotPsd,
        Error::DegenerateDirection
        | Error::DegenerateProjection { .. }
        | Error::RegularityViolation { .. }
        | Error::DegenerateSliding(_)
        | Error::TangentialContact(_) => NsbStatus::Degenerate,
        Error::ModelEvaluation(_)
        | Error::EventBudget(_)
        | Error::Divergence { .. }
        | Error::StageDivergence { .. } => NsbStatus::Divergence,
        Error::Row { source, .. } => status_of(source),
        Error::Io(_) => NsbStatus::Io,
    }
}

fn null(what: &str) -> Failure {
    Failure(NsbStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(NsbStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NsbStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn square(p: *const f64, n: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
    Ok(DMatrix::from_row_slice(n, n, slice(p, n * n, what)?))
}

unsafe fn vector(p: *const f64, n: usize, what: &str) -> Result<DVector<f64>, Failure> {
    Ok(DVector::from_column_slice(slice(p, n, what)?))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nsb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none occurred.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nsb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a belief from `mean[dim]` and row-major `cov[dim * dim]`.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsb_belief_new(
    dim: usize,
    mean: *const f64,
    cov: *const f64,
    out: *mut *mut NsbBelief,
) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dim == 0 {
            return Err(invalid("belief dimension must be positive"));
        }
        let b = GaussianBelief::new(vector(mean, dim, "mean")?, square(cov, dim, "cov")?)?;
        *out = Box::into_raw(Box::new(NsbBelief(b)));
        Ok(())
    })
}

/// # Safety
/// `belief` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn nsb_belief_free(belief: *mut NsbBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `belief` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsb_belief_dim(belief: *const NsbBelief) -> usize {
    belief.as_ref().map_or(0, |b| b.0.dim())
}

/// Copies the mean into `out[len]`; `len` must be at least the dimension.
///
/// # Safety
/// `belief` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nsb_belief_mean(
    belief: *const NsbBelief,
    out: *mut f64,
    len: usize,
) -> NsbStatus {
    guard(|| {
        let b = &handle(belief, "belief")?.0;
        copy_out(b.mean.iter().copied(), b.dim(), out, len)
    })
}

/// Copies the covariance row-major into `out[len]`; `len ≥ dim²`.
///
/// # Safety
/// `belief` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nsb_belief_cov(
    belief: *const NsbBelief,
    out: *mut f64,
    len: usize,
) -> NsbStatus {
    guard(|| {
        let b = &handle(belief, "belief")?.0;
        let n = b.dim();
        let rows = (0..n).flat_map(|i| (0..n).map(move |j| (i, j)));
        copy_out(rows.map(|(i, j)| b.cov[(i, j)]), n * n, out, len)
    })
}

unsafe fn copy_out(
    values: impl Iterator<Item = f64>,
    needed: usize,
    out: *mut f64,
    len: usize,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < needed {
        return Err(invalid(format!("output buffer holds {len} values, {needed} needed")));
    }
    for (k, v) in values.enumerate() {
        *out.add(k) = v;
    }
    Ok(())
}

/// Looks up a registry model with its default parameters.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsb_model_builtin(name: *const c_char, out: *mut *mut NsbModel) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = builtin_model(text(name, "name")?)?;
        *out = Box::into_raw(Box::new(NsbModel(ModelKind::Builtin(m))));
        Ok(())
    })
}

/// `f_i(x) = A_i x + f̄_i`, switching on `gᵀ(x - x̄) = 0`; mode 2 is
/// `gᵀ(x - x̄) > 0`. Matrices are row-major `dim × dim`.
///
/// # Safety
/// Every array must hold the stated number of elements; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn nsb_model_affine(
    dim: usize,
    a1: *const f64,
    a2: *const f64,
    f1bar: *const f64,
    f2bar: *const f64,
    g: *const f64,
    xbar: *const f64,
    out: *mut *mut NsbModel,
) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dim == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        let s = PiecewiseAffineSystem::new(
            square(a1, dim, "a1")?,
            square(a2, dim, "a2")?,
            vector(f1bar, dim, "f1bar")?,
            vector(f2bar, dim, "f2bar")?,
            vector(g, dim, "g")?,
            vector(xbar, dim, "xbar")?,
        )?;
        *out = Box::into_raw(Box::new(NsbModel(ModelKind::Affine(s))));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn nsb_model_free(model: *mut NsbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsb_model_state_dim(model: *const NsbModel) -> usize {
    model.as_ref().map_or(0, |m| m.dynamics().state_dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsb_model_control_dim(model: *const NsbModel) -> usize {
    model.as_ref().map_or(0, |m| m.dynamics().control_dim())
}

/// Default initial belief of a registry model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsb_model_initial_belief(
    model: *const NsbModel,
    out: *mut *mut NsbBelief,
) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        match &handle(model, "model")?.0 {
            ModelKind::Builtin(m) => {
                *out = Box::into_raw(Box::new(NsbBelief(m.initial.clone())));
                Ok(())
            }
            ModelKind::Affine(_) => Err(invalid("only registry models carry an initial belief")),
        }
    })
}

unsafe fn inputs(
    m: &NsbModel,
    b: &NsbBelief,
    u: *const f64,
    u_len: usize,
) -> Result<ControlSchedule, Failure> {
    let d = m.dynamics();
    if b.0.dim() != d.state_dim() {
        return Err(invalid(format!(
            "belief has dimension {}, model has {}",
            b.0.dim(),
            d.state_dim()
        )));
    }
    if u_len != d.control_dim() {
        return Err(invalid(format!("model takes {} controls, got {u_len}", d.control_dim())));
    }
    Ok(ControlSchedule::constant(vector(u, u_len, "u")?))
}

/// Propagates `belief` to `t_final` with the closed-form moment dynamics,
/// `steps` RK4 steps and the constant control `u[u_len]`.
///
/// # Safety
/// Handles must be live, `u` must hold `u_len` doubles (may be null when 0)
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsb_propagate(
    model: *const NsbModel,
    belief: *const NsbBelief,
    u: *const f64,
    u_len: usize,
    t_final: f64,
    steps: usize,
    out: *mut *mut NsbBelief,
) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (m, b) = (handle(model, "model")?, handle(belief, "belief")?);
        let schedule = inputs(m, b, u, u_len)?;
        let d = m.dynamics();
        let tr = rk4_joint(|bel, u| rhs_pws(d, bel, u), &b.0, &schedule, t_final, steps)?;
        *out = Box::into_raw(Box::new(NsbBelief(tr.last().clone())));
        Ok(())
    })
}

/// Empirical moments at `t_final` of `n_samples` switch-detecting sample
/// paths with step `h`, drawn from `belief` with `seed`.
///
/// # Safety
/// As for [`nsb_propagate`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn nsb_monte_carlo(
    model: *const NsbModel,
    belief: *const NsbBelief,
    u: *const f64,
    u_len: usize,
    t_final: f64,
    h: f64,
    n_samples: usize,
    seed: u64,
    out: *mut *mut NsbBelief,
) -> NsbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (m, b) = (handle(model, "model")?, handle(belief, "belief")?);
        let schedule = inputs(m, b, u, u_len)?;
        let cloud = draw_samples(&b.0, n_samples, seed)?;
        let ct = propagate_cloud(
            m.dynamics(),
            &cloud,
            &schedule,
            t_final,
            h,
            &SampleOptions::default(),
        )?;
        let last = ct.clouds.last().expect("cloud trajectory holds the initial cloud");
        *out = Box::into_raw(Box::new(NsbBelief(empirical_moments(last)?)));
        Ok(())
    })
}

/// Runs a named experiment and writes its artifacts into `out_dir`.
/// `config_json` may be null for the defaults; otherwise its `experiment`
/// must equal `name`. Solver non-convergence is not an error.
///
/// # Safety
/// String arguments must be NUL-terminated; `config_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn nsb_run_experiment(
    name: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> NsbStatus {
    guard(|| {
        let name = text(name, "name")?;
        let dir = text(out_dir, "out_dir")?;
        let cfg = if config_json.is_null() {
            default_config(name)?
        } else {
            let value: serde_json::Value =
                serde_json::from_str(text(config_json, "config_json")?).map_err(Error::from)?;
            validate_config_value(&value)?
        };
        if cfg.experiment != name {
            return Err(invalid(format!(
                "config is for experiment `{}`, not `{name}`",
                cfg.experiment
            )));
        }
        let start = Instant::now();
        let output = run_experiment(&cfg, seed)?;
        write_outputs(Path::new(dir), &cfg, seed, &output, start.elapsed())?;
        Ok(())
    })
}
