//! Named experiments: each one runs from a normalized config and produces a
//! `trace.csv` time series, optional extra artifacts and a JSON result block
//! that ends up in `summary.json`.

mod contact;
mod crossing;
mod planning;

pub use contact::{spring_dashpot, ContactReport};
pub use crossing::{
    crossing1d, crossing1d_error, error_sweep_jump, error_sweep_sigma, CrossingReport,
    ErrorWindowReport, SweepReport,
};
pub use planning::{
    compare, compare_baseline, implicit_constraint, quadcopter, Comparison, McSummary,
    PlanningReport,
};

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Column-labelled numeric table; `NaN` cells are written empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|&v| format_cell(v))
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e15)`.
fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Extra files written next to `trace.csv`.
#[derive(Debug, Clone)]
pub enum Artifact {
    Csv(Table),
    Json(Value),
}

/// Named artifacts in write order.
pub type Artifacts = Vec<(String, Artifact)>;

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trace: Table,
    pub artifacts: Artifacts,
    pub results: Value,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

/// Runs the experiment named in `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutput> {
    match cfg.experiment.as_str() {
        "crossing1d" => crossing1d(cfg, seed).map(|(t, a, r)| (t, a, to_value(&r))),
        "crossing1d-error" => crossing1d_error(cfg).map(|(t, r)| (t, vec![], to_value(&r))),
        "error-sweep-sigma" => error_sweep_sigma(cfg).map(|(t, r)| (t, vec![], to_value(&r))),
        "error-sweep-jump" => error_sweep_jump(cfg).map(|(t, r)| (t, vec![], to_value(&r))),
        "spring-dashpot" => spring_dashpot(cfg, seed).map(|(t, r)| (t, vec![], to_value(&r))),
        "quadcopter" => quadcopter(cfg, seed).map(|(t, a, r)| (t, a, to_value(&r))),
        "implicit-constraint" => {
            implicit_constraint(cfg, seed).map(|(t, a, r)| (t, a, to_value(&r)))
        }
        "compare-baseline" => compare_baseline(cfg, seed),
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
    .map(|(trace, artifacts, results)| ExperimentOutput {
        trace,
        artifacts,
        results,
    })
}

/// Tolerances fixed in the library, reported alongside the configured ones.
pub fn builtin_tolerances() -> Value {
    json!({
        "moments.var_floor_default": crate::moments::VAR_FLOOR,
        "systems.surface_tol": crate::systems::SURFACE_TOL,
        "montecarlo.psd_sampling_tol": crate::montecarlo::PSD_SAMPLING_TOL,
        "ocp.backoff_radicand_floor": 1e-14,
    })
}

/// Contents of `summary.json`.
pub fn summary_json(
    cfg: &ExperimentConfig,
    seed: u64,
    output: &ExperimentOutput,
    wall_clock: Duration,
) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment,
        "config_hash": cfg.hash(),
        "seeds": { "master": seed },
        "wall_clock_seconds": wall_clock.as_secs_f64(),
        "tolerances": {
            "configured": cfg.tolerances,
            "builtin": builtin_tolerances(),
        },
        "config": cfg,
        "results": output.results,
    })
}

/// Writes `trace.csv`, the extra artifacts and `summary.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    output: &ExperimentOutput,
    wall_clock: Duration,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    output
        .trace
        .write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?))?;
    for (name, artifact) in &output.artifacts {
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        match artifact {
            Artifact::Csv(t) => t.write_csv(f)?,
            Artifact::Json(v) => serde_json::to_writer_pretty(f, v)?,
        }
    }
    let summary = summary_json(cfg, seed, output, wall_clock);
    let mut f = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain("slope fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Trace columns for a belief: `mu_i` then `Sigma_ij` row-major.
pub(crate) fn belief_columns(prefix: &str, n: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..n).map(|i| format!("{prefix}mu_{i}")).collect();
    h.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("{prefix}Sigma_{i}{j}"))));
    h
}

pub(crate) fn belief_values(b: &crate::systems::GaussianBelief) -> Vec<f64> {
    let n = b.dim();
    let mut v: Vec<f64> = b.mean.iter().copied().collect();
    v.extend((0..n).flat_map(|i| (0..n).map(move |j| b.cov[(i, j)])));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1e-3, 1e-2, 1e-1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 7.0 * v.powf(1.3)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.3).abs() < 1e-12);
        assert!(loglog_slope(&x, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn table_writes_empty_cells_for_nan() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![0.5, f64::NAN]);
        t.push(vec![-1.5e-17, 2e20]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n0.5,\n-1.5e-17,2e20\n");
        assert_eq!(t.column("a"), Some(vec![0.5, -1.5e-17]));
    }
}
