//! Normalization-based moment dynamics for switched systems.
//!
//! For a belief `N(μ, Σ)` the probability mass on each side of the surface is
//! read off the projected Gaussian, and the mean rate is the expectation of
//! the discontinuous vector field under that belief. Covariance follows the
//! Lyapunov form `Σ̇ = JΣ + ΣJᵀ`, with `J` the derivative of the mean rate in
//! `μ` at fixed `Σ`.
//!
//! Two linearization baselines are provided for comparison: continuous-time
//! propagation through a tanh-smoothed field and the discrete Lyapunov map.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussmath::{big_phi, phi, project_belief, quad_form};
use crate::systems::{
    check_dims, ensure_finite, fd_step, smoothed_unchecked, symmetrized, GaussianBelief,
    PiecewiseAffineSystem, PiecewiseConstant1D, PiecewiseSmoothModel,
};

/// Projected variances below this are treated as degenerate.
pub const VAR_FLOOR: f64 = 1e-14;

/// What to do when the projected variance drops below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Report [`Error::DegenerateProjection`].
    Error,
    /// Use the single-mode Lyapunov dynamics of the mode containing the mean
    /// (`ψ(μ) = 0` counts as mode 2).
    #[default]
    SingleMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    pub var_floor: f64,
    pub degenerate: DegeneratePolicy,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            var_floor: VAR_FLOOR,
            degenerate: DegeneratePolicy::SingleMode,
        }
    }
}

/// Time derivative of a belief together with the Jacobian that generated
/// `sigma_dot = sym(jac Σ + Σ jacᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRates {
    pub mu_dot: DVector<f64>,
    pub sigma_dot: DMatrix<f64>,
    pub jac: DMatrix<f64>,
}

impl MomentRates {
    fn lyapunov(mu_dot: DVector<f64>, jac: DMatrix<f64>, cov: &DMatrix<f64>) -> Self {
        let js = &jac * cov;
        let sigma_dot = symmetrized(&(&js + js.transpose()));
        Self { mu_dot, sigma_dot, jac }
    }
}

/// Mean and variance rates of a scalar belief under piecewise constant
/// dynamics switching at 0.
pub fn rhs_pwc_1d(model: &PiecewiseConstant1D, mu: f64, v: f64) -> Result<(f64, f64)> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    if !mu.is_finite() {
        return Err(Error::Domain(format!("mean must be finite, got {mu}")));
    }
    let s = v.sqrt();
    let z = -mu / s;
    let mu_dot = model.f1bar * big_phi(z) + model.f2bar * big_phi(-z);
    let v_dot = 2.0 * (model.f2bar - model.f1bar) * phi(z) * s;
    Ok((mu_dot, v_dot))
}

/// [`rhs_pwa_with`] under the default options.
pub fn rhs_pwa(system: &PiecewiseAffineSystem, belief: &GaussianBelief) -> Result<MomentRates> {
    rhs_pwa_with(system, belief, &MomentOptions::default())
}

/// Exact expectation of a piecewise affine field under `N(μ, Σ)` and the
/// matching covariance rate.
///
/// With `z = (x̄_g - μ_g)/s`, `s² = gᵀΣg`:
/// `μ̇ = (A2 - A1)Σg φ(z)/s + f1(μ)Φ(z) + f2(μ)Φ(-z)` and
/// `J = A1Φ(z) + A2Φ(-z) + (f2(μ) - f1(μ))gᵀφ(z)/s + (A2 - A1)Σggᵀ z φ(z)/s²`.
/// Equal system matrices take the shorter route that drops the `Σg` terms.
pub fn rhs_pwa_with(
    system: &PiecewiseAffineSystem,
    belief: &GaussianBelief,
    opts: &MomentOptions,
) -> Result<MomentRates> {
    let (mu, cov) = (&belief.mean, &belief.cov);
    let p = project_belief(&system.g, mu, cov, &system.xbar)?;
    if !(p.var_g >= opts.var_floor) {
        return match opts.degenerate {
            DegeneratePolicy::Error => Err(Error::DegenerateProjection {
                var: p.var_g,
                floor: opts.var_floor,
            }),
            DegeneratePolicy::SingleMode => {
                let (a, fbar) = if p.mu_g < p.xbar_g {
                    (&system.a1, &system.f1bar)
                } else {
                    (&system.a2, &system.f2bar)
                };
                Ok(MomentRates::lyapunov(a * mu + fbar, a.clone(), cov))
            }
        };
    }
    let s = p.var_g.sqrt();
    let z = (p.xbar_g - p.mu_g) / s;
    let (w1, w2, dens) = (big_phi(z), big_phi(-z), phi(z));
    let g = &system.g;

    if system.a1 == system.a2 {
        let a = &system.a1;
        let mu_dot = a * mu + &system.f1bar * w1 + &system.f2bar * w2;
        let jac = a + (&system.f2bar - &system.f1bar) * g.transpose() * (dens / s);
        return Ok(MomentRates::lyapunov(mu_dot, jac, cov));
    }

    let da = &system.a2 - &system.a1;
    let sg = cov * g;
    let f1 = system.mode1(mu);
    let f2 = system.mode2(mu);
    let mu_dot = &da * &sg * (dens / s) + &f1 * w1 + &f2 * w2;
    let jac = &system.a1 * w1
        + &system.a2 * w2
        + (f2 - f1) * g.transpose() * (dens / s)
        + &da * &sg * g.transpose() * (z * dens / p.var_g);
    Ok(MomentRates::lyapunov(mu_dot, jac, cov))
}

/// [`rhs_pws_with`] under the default options.
pub fn rhs_pws<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    u: &DVector<f64>,
) -> Result<MomentRates> {
    rhs_pws_with(model, belief, u, &MomentOptions::default())
}

/// Moment rates for a general two-mode model, obtained by linearizing both
/// modes and the switching function at the mean and applying the affine
/// expectation. The Jacobian of the resulting mean rate (at fixed `Σ`) is
/// taken by central differences.
pub fn rhs_pws_with<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    u: &DVector<f64>,
    opts: &MomentOptions,
) -> Result<MomentRates> {
    check_dims(model, &belief.mean, u)?;
    if belief.cov.nrows() != belief.dim() || belief.cov.ncols() != belief.dim() {
        return Err(Error::DimensionMismatch("covariance shape".into()));
    }
    let cov = &belief.cov;
    let mean_rate = |m: &DVector<f64>| pws_mean_rate(model, m, cov, u, opts);
    let mu_dot = mean_rate(&belief.mean)?;
    let jac = try_fd_jacobian(mean_rate, &belief.mean)?;
    Ok(MomentRates::lyapunov(mu_dot, jac, cov))
}

/// `E[f]` under the local piecewise linearization at `mu`.
fn pws_mean_rate<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    opts: &MomentOptions,
) -> Result<DVector<f64>> {
    let psi = model.psi(mu);
    if !psi.is_finite() {
        return Err(Error::ModelEvaluation(format!("psi = {psi}")));
    }
    let grad = model.grad_psi(mu);
    ensure_finite(&grad, "switching-function gradient")?;
    let var = quad_form(cov, &grad);
    let f1 = model.f1(mu, u);
    let f2 = model.f2(mu, u);
    ensure_finite(&f1, "mode 1 right-hand side")?;
    ensure_finite(&f2, "mode 2 right-hand side")?;
    if !(var >= opts.var_floor) {
        return match opts.degenerate {
            DegeneratePolicy::Error => Err(Error::DegenerateProjection {
                var,
                floor: opts.var_floor,
            }),
            DegeneratePolicy::SingleMode => Ok(if psi < 0.0 { f1 } else { f2 }),
        };
    }
    let s = var.sqrt();
    let z = -psi / s;
    let (w1, w2, dens) = (big_phi(z), big_phi(-z), phi(z));
    let mut out = f1 * w1 + f2 * w2;
    // The Σ∇ψ correction only matters inside the blending band; skipping the
    // two Jacobian evaluations outside it changes the result by < φ(40).
    if dens > 0.0 {
        let dj = model.jac_f2(mu, u) - model.jac_f1(mu, u);
        out += dj * (cov * &grad) * (dens / s);
    }
    ensure_finite(&out, "mean rate")?;
    Ok(out)
}

/// Central-difference Jacobian of a fallible map.
pub(crate) fn try_fd_jacobian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut y = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for i in 0..n {
        let h = fd_step(x[i]);
        let (xp, xm) = (x[i] + h, x[i] - h);
        y[i] = xp;
        let fp = f(&y)?;
        y[i] = xm;
        let fm = f(&y)?;
        y[i] = x[i];
        let j = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), n));
        j.set_column(i, &((fp - fm) / (xp - xm)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Continuous-time linearization of the tanh-smoothed field:
/// `μ̇ = f_σ(μ)`, `Σ̇ = JΣ + ΣJᵀ` with `J = ∂f_σ/∂x (μ)`.
pub fn baseline_ct<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    u: &DVector<f64>,
    sigma_smooth: f64,
) -> Result<MomentRates> {
    if !(sigma_smooth > 0.0) {
        return Err(Error::Domain(format!(
            "smoothing parameter must be positive, got {sigma_smooth}"
        )));
    }
    check_dims(model, &belief.mean, u)?;
    let f = |x: &DVector<f64>| {
        let v = smoothed_unchecked(model, x, u, sigma_smooth);
        ensure_finite(&v, "smoothed right-hand side").map(|_| v)
    };
    let mu_dot = f(&belief.mean)?;
    let jac = try_fd_jacobian(f, &belief.mean)?;
    Ok(MomentRates::lyapunov(mu_dot, jac, &belief.cov))
}

/// Discrete-time Lyapunov step `μ⁺ = f_h(μ)`, `Σ⁺ = GΣGᵀ` with
/// `G = ∂f_h/∂x (μ)` by central differences.
pub fn baseline_dt<F>(f_h: F, belief: &GaussianBelief) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let checked = |x: &DVector<f64>| {
        let v = f_h(x)?;
        ensure_finite(&v, "discrete map").map(|_| v)
    };
    let mean = checked(&belief.mean)?;
    let g = try_fd_jacobian(checked, &belief.mean)?;
    if mean.len() != belief.dim() {
        return Err(Error::DimensionMismatch(format!(
            "discrete map returns {} entries for a state of dimension {}",
            mean.len(),
            belief.dim()
        )));
    }
    let cov = symmetrized(&(&g * &belief.cov * g.transpose()));
    GaussianBelief::new_unchecked(mean, cov)
}

/// Tightened constraint `h(μ) + γ √(∇hᵀ Σ ∇h)`; the radicand is clipped at 0.
pub fn chance_backoff(
    h_value: f64,
    grad_h: &DVector<f64>,
    belief: &GaussianBelief,
    gamma: f64,
) -> Result<f64> {
    if grad_h.len() != belief.dim() {
        return Err(Error::DimensionMismatch(format!(
            "constraint gradient has length {} for a state of dimension {}",
            grad_h.len(),
            belief.dim()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("backoff factor must be nonnegative, got {gamma}")));
    }
    Ok(h_value + gamma * quad_form(&belief.cov, grad_h).max(0.0).sqrt())
}
