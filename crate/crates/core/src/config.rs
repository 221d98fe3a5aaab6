//! Experiment configuration: schema check and default materialization.
//!
//! A config is a JSON object. `experiment` and `model` are required; every
//! other key falls back to the experiment's defaults. Unknown keys are
//! rejected at every level, and all problems are reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::systems::builtin::{merge_params, MergeError};
use crate::systems::{builtin_model, ModelParams};

pub const EXPERIMENTS: [&str; 8] = [
    "crossing1d",
    "crossing1d-error",
    "error-sweep-sigma",
    "error-sweep-jump",
    "spring-dashpot",
    "quadcopter",
    "implicit-constraint",
    "compare-baseline",
];

/// Registry model used by `experiment`.
pub fn experiment_model(experiment: &str) -> Result<&'static str> {
    Ok(match experiment {
        "crossing1d" | "crossing1d-error" | "error-sweep-sigma" | "error-sweep-jump" => {
            "crossing1d"
        }
        "spring-dashpot" => "spring_dashpot",
        "quadcopter" => "quadcopter",
        "implicit-constraint" | "compare-baseline" => "implicit_constraint",
        other => return Err(Error::UnknownExperiment(other.to_string())),
    })
}

fn is_sweep(experiment: &str) -> bool {
    experiment.starts_with("error-sweep")
}

/// Numerical tolerances in effect for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub switch_tol: f64,
    pub max_events: usize,
    pub var_floor: f64,
    pub tol_feas: f64,
    /// `null` selects `1e-6 (1 + |objective|)`.
    pub tol_stat: Option<f64>,
    pub rk4_substeps: usize,
    pub sample_substeps: usize,
    pub fd_scale: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub sigma_smooth: f64,
}

impl Tolerances {
    fn for_experiment(experiment: &str) -> Self {
        Self {
            switch_tol: 1e-10,
            max_events: 10_000,
            var_floor: 1e-14,
            tol_feas: 1e-6,
            tol_stat: None,
            // the strong drift of the implicit-constraint model needs finer
            // RK4 steps than its 0.5 s stages
            rk4_substeps: if matches!(experiment_model(experiment), Ok("implicit_constraint")) {
                4
            } else {
                1
            },
            sample_substeps: 10,
            fd_scale: 1.0,
            max_outer: 30,
            max_inner: 500,
            sigma_smooth: 5e-2,
        }
    }
}

/// A fully materialized experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub model: String,
    pub params: ModelParams,
    pub horizon: f64,
    pub steps: usize,
    /// Resolved by the runner when absent (flag, then environment, then 0).
    pub seed: Option<u64>,
    pub samples: usize,
    pub p_level: f64,
    pub tolerances: Tolerances,
    /// Sweep abscissae: initial standard deviations for `error-sweep-sigma`,
    /// offsets `|f̄₁ - f̄₂|` for `error-sweep-jump`.
    pub sweep: Option<Vec<f64>>,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Defaults for `experiment`, with model parameters taken from the registry.
pub fn default_config(experiment: &str) -> Result<ExperimentConfig> {
    let model = experiment_model(experiment)?;
    let bm = builtin_model(model)?;
    let (horizon, steps) = match experiment {
        "error-sweep-jump" => (4.0, 4000),
        "error-sweep-sigma" => (2.0, 4000),
        _ => (bm.horizon, bm.steps),
    };
    let samples = match experiment {
        "crossing1d" | "spring-dashpot" => 10_000,
        "quadcopter" => 1_000,
        "implicit-constraint" | "compare-baseline" => 50,
        _ => 0,
    };
    let sweep = match experiment {
        "error-sweep-sigma" => Some(logspace(1e-3, 1e-1, 9)),
        "error-sweep-jump" => Some(logspace(1e-12, 1e-1, 12)),
        _ => None,
    };
    let mut params = bm.params;
    if experiment == "error-sweep-jump" {
        // six standard deviations from the surface at both ends of T = 4
        params.insert("mu0".into(), crate::systems::ParamValue::Scalar(-2.0));
    }
    Ok(ExperimentConfig {
        experiment: experiment.to_string(),
        model: model.to_string(),
        params,
        horizon,
        steps,
        seed: None,
        samples,
        p_level: 0.99,
        tolerances: Tolerances::for_experiment(experiment),
        sweep,
    })
}

const TOP_KEYS: [&str; 10] = [
    "experiment",
    "model",
    "params",
    "horizon",
    "steps",
    "seed",
    "samples",
    "p_level",
    "tolerances",
    "sweep",
];

fn take<T: for<'de> Deserialize<'de>>(
    obj: &Map<String, Value>,
    key: &str,
    what: &str,
    errors: &mut Vec<String>,
) -> Option<T> {
    let v = obj.get(key)?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(_) => {
            errors.push(format!("`{key}` must be {what}"));
            None
        }
    }
}

/// Checks `value` and returns the normalized config, or every problem found.
pub fn validate_config_value(value: &Value) -> Result<ExperimentConfig> {
    let empty = Map::new();
    let obj = match value {
        Value::Object(m) => m,
        Value::Null => &empty,
        _ => return Err(Error::Config(vec!["config must be a JSON object".into()])),
    };
    let mut errors = Vec::new();
    for key in obj.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key `{key}`"));
        }
    }
    let experiment: Option<String> = take(obj, "experiment", "a string", &mut errors);
    let model: Option<String> = take(obj, "model", "a string", &mut errors);
    if !obj.contains_key("experiment") {
        errors.push(format!(
            "missing required key `experiment` (one of: {})",
            EXPERIMENTS.join(", ")
        ));
    }
    if !obj.contains_key("model") {
        errors.push("missing required key `model`".into());
    }
    let Some(experiment) = experiment else {
        return Err(Error::Config(errors));
    };
    let mut cfg = match default_config(&experiment) {
        Ok(c) => c,
        Err(_) => {
            errors.push(format!(
                "unknown experiment `{experiment}` (one of: {})",
                EXPERIMENTS.join(", ")
            ));
            return Err(Error::Config(errors));
        }
    };
    if let Some(m) = &model {
        if *m != cfg.model {
            errors.push(format!(
                "experiment `{experiment}` runs model `{}`, not `{m}`",
                cfg.model
            ));
        }
    }

    if let Some(p) = take::<ModelParams>(obj, "params", "an object of numbers or arrays", &mut errors)
    {
        match merge_params(&cfg.model, &p) {
            Ok(merged) => cfg.params = merged,
            Err(MergeError::Invalid(e)) => errors.extend(e),
            Err(MergeError::Unknown(n)) => errors.push(format!("unknown model `{n}`")),
        }
    }
    if let Some(h) = take::<f64>(obj, "horizon", "a number", &mut errors) {
        if h > 0.0 && h.is_finite() {
            cfg.horizon = h;
        } else {
            errors.push(format!("`horizon` must be positive, got {h}"));
        }
    }
    if let Some(n) = take::<usize>(obj, "steps", "a non-negative integer", &mut errors) {
        if n >= 1 {
            cfg.steps = n;
        } else {
            errors.push("`steps` must be at least 1".into());
        }
    }
    if let Some(s) = take::<Option<u64>>(obj, "seed", "a non-negative integer", &mut errors) {
        cfg.seed = s;
    }
    if let Some(n) = take::<usize>(obj, "samples", "a non-negative integer", &mut errors) {
        cfg.samples = n;
    }
    if let Some(p) = take::<f64>(obj, "p_level", "a number", &mut errors) {
        if p > 0.5 && p < 1.0 {
            cfg.p_level = p;
        } else {
            errors.push(format!("`p_level` must lie in (0.5, 1), got {p}"));
        }
    }
    if let Some(t) = obj.get("tolerances") {
        match t {
            Value::Object(tm) => {
                let mut merged = serde_json::to_value(&cfg.tolerances).expect("serializable");
                let target = merged.as_object_mut().expect("object");
                for (k, v) in tm {
                    if target.contains_key(k) {
                        target.insert(k.clone(), v.clone());
                    } else {
                        errors.push(format!("unknown key `tolerances.{k}`"));
                    }
                }
                match serde_json::from_value::<Tolerances>(merged) {
                    Ok(t) => {
                        errors.extend(check_tolerances(&t));
                        cfg.tolerances = t;
                    }
                    Err(e) => errors.push(format!("invalid `tolerances`: {e}")),
                }
            }
            _ => errors.push("`tolerances` must be an object".into()),
        }
    }
    if let Some(Some(s)) = take::<Option<Vec<f64>>>(obj, "sweep", "an array of numbers", &mut errors)
    {
        if !is_sweep(&experiment) {
            errors.push("`sweep` is only valid for the error-sweep experiments".into());
        } else if s.len() < 2 || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            errors.push("`sweep` needs at least 2 positive values".into());
        } else {
            cfg.sweep = Some(s);
        }
    }
    if errors.is_empty() {
        // the resolved model must still build (e.g. positive sigma0)
        if let Err(e) = crate::systems::BuiltinModel::from_params(&cfg.model, &cfg.params) {
            return Err(match e {
                Error::Config(v) => Error::Config(v),
                other => Error::Config(vec![other.to_string()]),
            });
        }
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

fn check_tolerances(t: &Tolerances) -> Vec<String> {
    let mut e = Vec::new();
    let positive = [
        ("switch_tol", t.switch_tol),
        ("var_floor", t.var_floor),
        ("tol_feas", t.tol_feas),
        ("fd_scale", t.fd_scale),
        ("sigma_smooth", t.sigma_smooth),
    ];
    for (k, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            e.push(format!("`tolerances.{k}` must be positive, got {v}"));
        }
    }
    if let Some(v) = t.tol_stat {
        if !(v > 0.0) {
            e.push(format!("`tolerances.tol_stat` must be positive, got {v}"));
        }
    }
    for (k, v) in [
        ("rk4_substeps", t.rk4_substeps),
        ("sample_substeps", t.sample_substeps),
        ("max_events", t.max_events),
        ("max_outer", t.max_outer),
    ] {
        if v == 0 {
            e.push(format!("`tolerances.{k}` must be at least 1"));
        }
    }
    e
}

/// Reads and validates a config file. An empty file counts as `{}`.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(&text)?
    };
    validate_config_value(&value)
}

impl ExperimentConfig {
    /// SHA-256 of the normalized config serialized as compact JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::ParamValue;
    use serde_json::json;

    fn messages(r: Result<ExperimentConfig>) -> Vec<String> {
        match r {
            Err(Error::Config(v)) => v,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn empty_config_names_required_keys() {
        let m = messages(validate_config_value(&json!({})));
        assert!(m.iter().any(|s| s.contains("`experiment`")));
        assert!(m.iter().any(|s| s.contains("`model`")));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.json");
        std::fs::write(&p, "").unwrap();
        assert_eq!(messages(validate_config(&p)).len(), 2);
    }

    #[test]
    fn defaults_only_echoes_registry() {
        let cfg = validate_config_value(&json!({"experiment": "crossing1d", "model": "crossing1d"}))
            .unwrap();
        assert_eq!(cfg, default_config("crossing1d").unwrap());
        assert_eq!(cfg.params["sigma0"], ParamValue::Scalar(0.3));
        assert_eq!((cfg.horizon, cfg.steps), (2.0, 400));
        assert_eq!(cfg.tolerances.switch_tol, 1e-10);
    }

    #[test]
    fn override_is_reflected() {
        let cfg = validate_config_value(&json!({
            "experiment": "crossing1d",
            "model": "crossing1d",
            "params": {"sigma0": 0.1},
            "tolerances": {"switch_tol": 1e-12},
        }))
        .unwrap();
        assert_eq!(cfg.params["sigma0"], ParamValue::Scalar(0.1));
        assert_eq!(cfg.params["f1bar"], ParamValue::Scalar(3.0));
        assert_eq!(cfg.tolerances.switch_tol, 1e-12);
        assert_ne!(cfg.hash(), default_config("crossing1d").unwrap().hash());
    }

    #[test]
    fn collects_every_problem() {
        let m = messages(validate_config_value(&json!({
            "experiment": "quadcopter",
            "model": "crossing1d",
            "params": {"drag": "x", "nope": 1.0},
            "colour": 1,
            "p_level": 1.5,
            "tolerances": {"switch_tol": -1.0, "bogus": 2},
            "sweep": [1.0, 2.0],
        })));
        for needle in [
            "unknown key `colour`",
            "runs model `quadcopter`",
            "`params`",
            "`p_level`",
            "tolerances.bogus",
            "`sweep`",
        ] {
            assert!(m.iter().any(|s| s.contains(needle)), "{needle} not in {m:?}");
        }
    }

    #[test]
    fn bad_parameters_are_named() {
        let m = messages(validate_config_value(&json!({
            "experiment": "quadcopter",
            "model": "quadcopter",
            "params": {"drag": 0.1, "nope": 1.0, "mu0": [1.0]},
        })));
        assert!(m.iter().any(|s| s.contains("`nope`")));
        assert!(m.iter().any(|s| s.contains("`mu0`")));
        let m = messages(validate_config_value(&json!({
            "experiment": "crossing1d", "model": "crossing1d", "params": {"sigma0": 0.0},
        })));
        assert!(m.iter().any(|s| s.contains("sigma0")));
    }

    #[test]
    fn unknown_experiment_is_reported() {
        let m = messages(validate_config_value(&json!({"experiment": "nope", "model": "x"})));
        assert!(m.iter().any(|s| s.contains("unknown experiment")));
    }

    #[test]
    fn every_experiment_has_defaults() {
        for e in EXPERIMENTS {
            let cfg = default_config(e).unwrap();
            let v = serde_json::to_value(&cfg).unwrap();
            assert_eq!(validate_config_value(&v).unwrap(), cfg);
        }
    }
}
