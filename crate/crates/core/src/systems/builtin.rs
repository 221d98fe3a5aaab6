//! Named example models with their default parameters.
//!
//! Parameters live in a flat string-keyed map so that experiment configs can
//! override any of them; [`BuiltinModel::from_params`] rejects unknown keys
//! and shape mismatches.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GaussianBelief, PiecewiseAffineSystem, PiecewiseConstant1D, PiecewiseSmoothModel};
use crate::error::{Error, Result};

pub const BUILTIN_MODELS: [&str; 4] = [
    "crossing1d",
    "spring_dashpot",
    "quadcopter",
    "implicit_constraint",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

pub type ModelParams = BTreeMap<String, ParamValue>;

fn params(entries: &[(&str, ParamValue)]) -> ModelParams {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

use ParamValue::{Scalar as S, Vector as V};

/// Registry defaults for `name`.
pub fn builtin_defaults(name: &str) -> Result<ModelParams> {
    let p = match name {
        "crossing1d" => params(&[
            ("f1bar", S(3.0)),
            ("f2bar", S(1.0)),
            ("mu0", S(-3.0)),
            ("sigma0", S(0.3)),
        ]),
        // No constants are given for the contact model; these produce
        // several contact/flight phases within the default horizon.
        "spring_dashpot" => params(&[
            ("k", S(10.0)),
            ("c", S(0.5)),
            ("g", S(1.0)),
            ("mu0", V(vec![2.0, 0.0])),
            ("sigma0_diag", V(vec![0.1, 0.05])),
        ]),
        "quadcopter" => params(&[
            ("drag", S(0.01)),
            ("wind", S(-1.0)),
            ("u_max", S(5.0)),
            ("mu0", V(vec![0.0, 1.0, 5.0, 0.0])),
            ("sigma0_diag", V(vec![1e-1, 1e-1, 1e-5, 1e-5])),
            ("p_y_min", S(-6.0)),
            ("obstacle_center", S(40.0)),
            ("obstacle_coeff", S(0.05)),
            ("eps_u", S(1e-5)),
        ]),
        "implicit_constraint" => params(&[
            ("u_max", S(2.0)),
            ("field", V(vec![4.5, 5.0])),
            ("goal", V(vec![6.0, -2.0])),
            ("mu0", V(vec![-6.5, -2.0])),
            ("sigma0_diag", V(vec![0.25, 0.25])),
            ("eps_huber", S(0.5f64.sqrt())),
            ("eps_u", S(1e-5)),
            ("goal_radius", S(1.0)),
            ("sigma_smooth", S(5e-2)),
        ]),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(p)
}

fn default_horizon_steps(name: &str) -> (f64, usize) {
    match name {
        "crossing1d" => (2.0, 400),
        "spring_dashpot" => (8.0, 800),
        "quadcopter" => (6.0, 30),
        _ => (7.5, 15),
    }
}

/// Quadcopter with a wind layer above `p_y = 0`.
///
/// State `(p_x, p_y, v_x, v_y)`, control `(u_x, u_y)` (accelerations). Mode 1
/// (`p_y < 0`) is the wind shadow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadcopter {
    pub drag: f64,
    pub wind: f64,
}

impl Quadcopter {
    fn field(&self, x: &DVector<f64>, u: &DVector<f64>, wind: f64) -> DVector<f64> {
        let rel = x[2] - wind;
        DVector::from_column_slice(&[x[2], x[3], u[0] - self.drag * rel.abs() * rel, u[1]])
    }

    fn jac(&self, x: &DVector<f64>, wind: f64) -> DMatrix<f64> {
        let rel = x[2] - wind;
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 2)] = 1.0;
        j[(1, 3)] = 1.0;
        j[(2, 2)] = -2.0 * self.drag * rel.abs();
        j
    }
}

impl PiecewiseSmoothModel for Quadcopter {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.field(x, u, 0.0)
    }
    fn f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.field(x, u, self.wind)
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        x[1]
    }
    fn grad_psi(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0])
    }
    fn jac_f1(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.jac(x, 0.0)
    }
    fn jac_f2(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.jac(x, self.wind)
    }
}

/// Planar point mass whose velocity is the control, except below the
/// parabola `p_y = -p_x²` where a strong constant drift is added.
///
/// Switching function `ψ = p_y + p_x²`, so mode 1 (`ψ < 0`) is the region with
/// the drift `-field * u_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitConstraint {
    pub u_max: f64,
    pub field: [f64; 2],
}

impl PiecewiseSmoothModel for ImplicitConstraint {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn f1(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[
            u[0] - self.field[0] * self.u_max,
            u[1] - self.field[1] * self.u_max,
        ])
    }
    fn f2(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        x[1] + x[0] * x[0]
    }
    fn grad_psi(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[2.0 * x[0], 1.0])
    }
    fn jac_f1(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn jac_f2(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
}

/// A registry model with its resolved parameters and experiment defaults.
pub struct BuiltinModel {
    pub name: String,
    pub params: ModelParams,
    pub initial: GaussianBelief,
    pub horizon: f64,
    pub steps: usize,
    model: Box<dyn PiecewiseSmoothModel>,
    affine: Option<PiecewiseAffineSystem>,
    constant: Option<PiecewiseConstant1D>,
}

impl std::fmt::Debug for BuiltinModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("horizon", &self.horizon)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

/// Looks up `name` with all defaults.
pub fn builtin_model(name: &str) -> Result<BuiltinModel> {
    BuiltinModel::from_params(name, &ModelParams::new())
}

impl BuiltinModel {
    /// Builds `name` with `overrides` applied on top of the registry defaults.
    pub fn from_params(name: &str, overrides: &ModelParams) -> Result<Self> {
        let params = merge_params(name, overrides).map_err(|errs| match errs {
            MergeError::Unknown(n) => Error::UnknownModel(n),
            MergeError::Invalid(e) => Error::Config(e),
        })?;
        let get = |k: &str| scalar(&params, k);
        let vec = |k: &str| vector(&params, k);
        let (horizon, steps) = default_horizon_steps(name);

        let diag_belief = |mu: &[f64], diag: &[f64]| -> Result<GaussianBelief> {
            if mu.len() != diag.len() {
                return Err(Error::Config(vec![format!(
                    "mu0 has {} entries but sigma0_diag has {}",
                    mu.len(),
                    diag.len()
                )]));
            }
            GaussianBelief::from_diag(mu, diag)
        };

        let built = match name {
            "crossing1d" => {
                let sys = PiecewiseConstant1D::new(get("f1bar"), get("f2bar"))?;
                let sigma0 = get("sigma0");
                if !(sigma0 > 0.0) {
                    return Err(Error::Config(vec![format!("sigma0 must be positive, got {sigma0}")]));
                }
                let affine = sys.to_affine();
                Self {
                    name: name.into(),
                    initial: GaussianBelief::scalar(get("mu0"), sigma0 * sigma0)?,
                    horizon,
                    steps,
                    model: Box::new(affine.clone()),
                    affine: Some(affine),
                    constant: Some(sys),
                    params,
                }
            }
            "spring_dashpot" => {
                let (k, c, g) = (get("k"), get("c"), get("g"));
                let affine = PiecewiseAffineSystem::new(
                    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -k, -c]),
                    DVector::from_column_slice(&[0.0, -g]),
                    DVector::zeros(2),
                    DVector::from_column_slice(&[-1.0, 0.0]),
                    DVector::zeros(2),
                )?;
                Self {
                    name: name.into(),
                    initial: diag_belief(&vec("mu0"), &vec("sigma0_diag"))?,
                    horizon,
                    steps,
                    model: Box::new(affine.clone()),
                    affine: Some(affine),
                    constant: None,
                    params,
                }
            }
            "quadcopter" => Self {
                name: name.into(),
                initial: diag_belief(&vec("mu0"), &vec("sigma0_diag"))?,
                horizon,
                steps,
                model: Box::new(Quadcopter {
                    drag: get("drag"),
                    wind: get("wind"),
                }),
                affine: None,
                constant: None,
                params,
            },
            "implicit_constraint" => {
                let field = vec("field");
                if field.len() != 2 {
                    return Err(Error::Config(vec!["field must have 2 entries".into()]));
                }
                Self {
                    name: name.into(),
                    initial: diag_belief(&vec("mu0"), &vec("sigma0_diag"))?,
                    horizon,
                    steps,
                    model: Box::new(ImplicitConstraint {
                        u_max: get("u_max"),
                        field: [field[0], field[1]],
                    }),
                    affine: None,
                    constant: None,
                    params,
                }
            }
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        if built.initial.dim() != built.model.state_dim() {
            return Err(Error::Config(vec![format!(
                "initial mean has dimension {} but model state has {}",
                built.initial.dim(),
                built.model.state_dim()
            )]));
        }
        Ok(built)
    }

    pub fn model(&self) -> &dyn PiecewiseSmoothModel {
        self.model.as_ref()
    }

    /// Piecewise affine form, for models that have one.
    pub fn affine(&self) -> Option<&PiecewiseAffineSystem> {
        self.affine.as_ref()
    }

    /// Scalar piecewise constant form (crossing1d only).
    pub fn constant(&self) -> Option<&PiecewiseConstant1D> {
        self.constant.as_ref()
    }

    pub fn scalar(&self, key: &str) -> f64 {
        scalar(&self.params, key)
    }

    pub fn vector(&self, key: &str) -> Vec<f64> {
        vector(&self.params, key)
    }
}

fn scalar(p: &ModelParams, key: &str) -> f64 {
    match p.get(key) {
        Some(ParamValue::Scalar(v)) => *v,
        _ => panic!("parameter `{key}` is not a validated scalar"),
    }
}

fn vector(p: &ModelParams, key: &str) -> Vec<f64> {
    match p.get(key) {
        Some(ParamValue::Vector(v)) => v.clone(),
        _ => panic!("parameter `{key}` is not a validated vector"),
    }
}

pub(crate) enum MergeError {
    Unknown(String),
    Invalid(Vec<String>),
}

/// Overlays `overrides` on the defaults of `name`, collecting every problem.
pub(crate) fn merge_params(
    name: &str,
    overrides: &ModelParams,
) -> std::result::Result<ModelParams, MergeError> {
    let mut merged = builtin_defaults(name).map_err(|_| MergeError::Unknown(name.into()))?;
    let mut errors = Vec::new();
    for (key, value) in overrides {
        match (merged.get(key), value) {
            (None, _) => errors.push(format!("model `{name}` has no parameter `{key}`")),
            (Some(ParamValue::Scalar(_)), ParamValue::Scalar(v)) if v.is_finite() => {
                merged.insert(key.clone(), value.clone());
            }
            (Some(ParamValue::Vector(d)), ParamValue::Vector(v))
                if v.len() == d.len() && v.iter().all(|x| x.is_finite()) =>
            {
                merged.insert(key.clone(), value.clone());
            }
            (Some(ParamValue::Scalar(_)), _) => {
                errors.push(format!("parameter `{key}` must be a finite number"))
            }
            (Some(ParamValue::Vector(d)), _) => errors.push(format!(
                "parameter `{key}` must be an array of {} finite numbers",
                d.len()
            )),
        }
    }
    if errors.is_empty() {
        Ok(merged)
    } else {
        Err(MergeError::Invalid(errors))
    }
}
