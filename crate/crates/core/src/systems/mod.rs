//! Two-mode nonsmooth systems `ẋ = f1(x,u)` for `ψ(x) < 0`, `ẋ = f2(x,u)` for
//! `ψ(x) > 0`, and the Gaussian belief that gets propagated through them.

pub(crate) mod builtin;

pub use builtin::{
    builtin_defaults, builtin_model, BuiltinModel, ImplicitConstraint, ModelParams, ParamValue,
    Quadcopter, BUILTIN_MODELS,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Mean and covariance of a multivariate normal belief.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

impl GaussianBelief {
    /// Validated constructor: square, symmetric within 1e-12 (relative to the
    /// largest entry) and PSD within -1e-10.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let b = Self::new_unchecked(mean, cov)?;
        let scale = b.cov.amax().max(1.0);
        let asym = (&b.cov - b.cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Domain(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = b.min_eigenvalue();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::NotPsd { min_eig });
        }
        Ok(b)
    }

    /// Only checks dimensions and finiteness.
    pub fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {n} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("belief contains non-finite entries".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn from_diag(mean: &[f64], diag: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let sym = symmetrized(&self.cov);
        sym.symmetric_eigenvalues().min()
    }

    pub fn symmetrize(&mut self) {
        self.cov = symmetrized(&self.cov);
    }
}

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Which side of the switching surface a point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    One,
    Two,
    OnSurface,
}

/// A two-mode piecewise smooth right-hand side. Mode 1 holds for `ψ(x) < 0`.
///
/// Controls enter as parameters; uncontrolled models have `control_dim() == 0`
/// and receive an empty vector. Jacobians are `∂f/∂x` (rows = outputs).
pub trait PiecewiseSmoothModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize {
        0
    }

    fn f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn psi(&self, x: &DVector<f64>) -> f64;
    fn grad_psi(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jac_f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|y| self.f1(y, u), x)
    }

    fn jac_f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|y| self.f2(y, u), x)
    }
}

impl<M: PiecewiseSmoothModel + ?Sized> PiecewiseSmoothModel for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).f1(x, u)
    }
    fn f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).f2(x, u)
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        (**self).psi(x)
    }
    fn grad_psi(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).grad_psi(x)
    }
    fn jac_f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_f1(x, u)
    }
    fn jac_f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_f2(x, u)
    }
}

impl<M: PiecewiseSmoothModel + ?Sized> PiecewiseSmoothModel for Box<M> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).f1(x, u)
    }
    fn f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).f2(x, u)
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        (**self).psi(x)
    }
    fn grad_psi(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).grad_psi(x)
    }
    fn jac_f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_f1(x, u)
    }
    fn jac_f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_f2(x, u)
    }
}

/// Central-difference Jacobian with per-coordinate step `eps^(1/3) max(1, |x_i|)`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut y = x.clone();
    for i in 0..n {
        let h = fd_step(x[i]);
        let (xp, xm) = (x[i] + h, x[i] - h);
        y[i] = xp;
        let fp = f(&y);
        y[i] = xm;
        let fm = f(&y);
        y[i] = x[i];
        // the realized spacing, so that linear maps are differentiated exactly
        cols.push((fp - fm) / (xp - xm));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |r, c| cols[c][r])
}

#[inline]
pub(crate) fn fd_step(xi: f64) -> f64 {
    f64::EPSILON.cbrt() * xi.abs().max(1.0)
}

/// Scalar piecewise constant dynamics `ẋ = f̄1` for `x < 0`, `f̄2` for `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseConstant1D {
    pub f1bar: f64,
    pub f2bar: f64,
}

impl PiecewiseConstant1D {
    pub fn new(f1bar: f64, f2bar: f64) -> Result<Self> {
        if !f1bar.is_finite() || !f2bar.is_finite() {
            return Err(Error::Domain("mode velocities must be finite".into()));
        }
        if f1bar == 0.0 && f2bar == 0.0 {
            return Err(Error::Domain("at least one mode velocity must be nonzero".into()));
        }
        Ok(Self { f1bar, f2bar })
    }

    /// Embedding as a scalar piecewise affine system with `A = 0`, `g = 1`, `x̄ = 0`.
    pub fn to_affine(&self) -> PiecewiseAffineSystem {
        PiecewiseAffineSystem {
            a1: DMatrix::zeros(1, 1),
            a2: DMatrix::zeros(1, 1),
            f1bar: DVector::from_element(1, self.f1bar),
            f2bar: DVector::from_element(1, self.f2bar),
            g: DVector::from_element(1, 1.0),
            xbar: DVector::zeros(1),
        }
    }
}

/// `f_i(x) = A_i x + f̄_i`, switching on the hyperplane `gᵀ(x - x̄) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineSystem {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub f1bar: DVector<f64>,
    pub f2bar: DVector<f64>,
    pub g: DVector<f64>,
    pub xbar: DVector<f64>,
}

impl PiecewiseAffineSystem {
    pub fn new(
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        f1bar: DVector<f64>,
        f2bar: DVector<f64>,
        g: DVector<f64>,
        xbar: DVector<f64>,
    ) -> Result<Self> {
        let n = g.len();
        let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
        if !square(&a1) || !square(&a2) || f1bar.len() != n || f2bar.len() != n || xbar.len() != n
        {
            return Err(Error::DimensionMismatch(format!(
                "piecewise affine system of dimension {n} has inconsistent blocks"
            )));
        }
        if g.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateDirection);
        }
        Ok(Self {
            a1,
            a2,
            f1bar,
            f2bar,
            g,
            xbar,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn mode1(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a1 * x + &self.f1bar
    }

    pub fn mode2(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a2 * x + &self.f2bar
    }
}

impl PiecewiseSmoothModel for PiecewiseAffineSystem {
    fn state_dim(&self) -> usize {
        self.dim()
    }
    fn f1(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        self.mode1(x)
    }
    fn f2(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        self.mode2(x)
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        self.g.dot(&(x - &self.xbar))
    }
    fn grad_psi(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.g.clone()
    }
    fn jac_f1(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a1.clone()
    }
    fn jac_f2(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a2.clone()
    }
}

/// Result of evaluating the discontinuous right-hand side at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsEval {
    pub xdot: DVector<f64>,
    pub mode: Mode,
    pub psi: f64,
}

/// Default band `|ψ| ≤ tol` reported as [`Mode::OnSurface`].
pub const SURFACE_TOL: f64 = 1e-10;

/// Evaluates `f1` for `ψ < 0` and `f2` otherwise. Points within `surface_tol`
/// of the surface are flagged [`Mode::OnSurface`]; their `xdot` still follows
/// the sign of `ψ` (`ψ = 0` picks `f2`) and the Filippov treatment is left to
/// the caller.
pub fn eval_rhs<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    surface_tol: f64,
) -> Result<RhsEval> {
    check_dims(model, x, u)?;
    let psi = model.psi(x);
    if !psi.is_finite() {
        return Err(Error::ModelEvaluation(format!("psi = {psi}")));
    }
    let xdot = if psi < 0.0 { model.f1(x, u) } else { model.f2(x, u) };
    ensure_finite(&xdot, "mode right-hand side")?;
    let mode = if psi.abs() <= surface_tol {
        Mode::OnSurface
    } else if psi < 0.0 {
        Mode::One
    } else {
        Mode::Two
    };
    Ok(RhsEval { xdot, mode, psi })
}

/// `(1 - α) f1 + α f2` with `α = (1 + tanh(ψ/σ)) / 2`.
pub fn smoothed_rhs<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sigma_smooth: f64,
) -> Result<DVector<f64>> {
    if !(sigma_smooth > 0.0) {
        return Err(Error::Domain(format!(
            "smoothing parameter must be positive, got {sigma_smooth}"
        )));
    }
    check_dims(model, x, u)?;
    let v = smoothed_unchecked(model, x, u, sigma_smooth);
    ensure_finite(&v, "smoothed right-hand side")?;
    Ok(v)
}

pub(crate) fn smoothed_unchecked<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sigma_smooth: f64,
) -> DVector<f64> {
    let alpha = 0.5 * (1.0 + (model.psi(x) / sigma_smooth).tanh());
    model.f1(x, u) * (1.0 - alpha) + model.f2(x, u) * alpha
}

pub(crate) fn check_dims<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects state {} / control {}, got {} / {}",
            model.state_dim(),
            model.control_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::ModelEvaluation(format!("{what} is not finite")))
    }
}
