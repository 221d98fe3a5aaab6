//! Chance-constrained planning experiments.

use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::{belief_columns, belief_values, Artifact, Artifacts, Table};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::moments::MomentOptions;
use crate::ocp::{
    implicit_constraint_problem, quadcopter_problem, rollout, solve_multistart,
    straight_line_controls, verify_solution_mc, McReport, OcpOptions, OcpProblem, OcpSolution,
    Propagation,
};
use crate::systems::BuiltinModel;

#[derive(Debug, Clone, Serialize)]
pub struct PlanningReport {
    pub propagation: Propagation,
    pub objective: f64,
    /// Objective of `u ≡ 0`.
    pub idle_objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub min_cov_eigenvalue: f64,
    pub solve_seconds: f64,
    /// Signed distance estimate `ψ(μ_k)/‖∇ψ(μ_k)‖` of each mean knot.
    pub clearance: Vec<f64>,
    pub mc: Option<McSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub n_samples: usize,
    pub seed: u64,
    pub satisfaction: Vec<Vec<f64>>,
    pub min_satisfaction: Option<f64>,
    pub goal_fraction: Option<f64>,
}

impl From<&McReport> for McSummary {
    fn from(r: &McReport) -> Self {
        Self {
            n_samples: r.n_samples,
            seed: r.seed,
            satisfaction: r.satisfaction.clone(),
            min_satisfaction: r.min_satisfaction,
            goal_fraction: r.goal_fraction,
        }
    }
}

pub(crate) fn ocp_options(cfg: &ExperimentConfig) -> OcpOptions {
    let t = &cfg.tolerances;
    OcpOptions {
        max_outer: t.max_outer,
        max_inner: t.max_inner,
        tol_stat: t.tol_stat,
        tol_feas: t.tol_feas,
        rk4_substeps: t.rk4_substeps,
        fd_scale: t.fd_scale,
        moments: MomentOptions {
            var_floor: t.var_floor,
            ..MomentOptions::default()
        },
        ..OcpOptions::default()
    }
}

fn model_for(cfg: &ExperimentConfig) -> Result<BuiltinModel> {
    let mut bm = BuiltinModel::from_params(&cfg.model, &cfg.params)?;
    bm.horizon = cfg.horizon;
    bm.steps = cfg.steps;
    Ok(bm)
}

fn clearance(problem: &OcpProblem, sol: &OcpSolution) -> Vec<f64> {
    sol.trajectory
        .beliefs
        .iter()
        .map(|b| problem.model.psi(&b.mean) / problem.model.grad_psi(&b.mean).norm())
        .collect()
}

struct Planned {
    solution: OcpSolution,
    report: PlanningReport,
    mc: Option<McReport>,
}

fn plan(
    problem: &OcpProblem,
    cfg: &ExperimentConfig,
    seed: u64,
    inits: &[nalgebra::DMatrix<f64>],
    prop: Propagation,
) -> Result<Planned> {
    let opts = ocp_options(cfg);
    let start = Instant::now();
    let solution = solve_multistart(problem, inits, &opts, prop)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let idle = rollout(problem, &problem.zero_controls(), &opts, prop)?;
    let mc = if cfg.samples >= 2 {
        Some(verify_solution_mc(
            problem,
            &solution,
            cfg.samples,
            seed,
            cfg.tolerances.sample_substeps,
        )?)
    } else {
        None
    };
    let report = PlanningReport {
        propagation: prop,
        objective: solution.objective,
        idle_objective: idle.objective,
        max_violation: solution.max_violation,
        stationarity: solution.stationarity,
        iterations: solution.iterations,
        outer_iterations: solution.outer_iterations,
        converged: solution.converged,
        min_cov_eigenvalue: solution.min_cov_eig,
        solve_seconds,
        clearance: clearance(problem, &solution),
        mc: mc.as_ref().map(McSummary::from),
    };
    Ok(Planned {
        solution,
        report,
        mc,
    })
}

/// Knot-wise table of the solution: belief, control (empty at the final
/// knot), backoff values and clearance.
fn solution_table(problem: &OcpProblem, sol: &OcpSolution, prefix: &str) -> Table {
    let n = problem.initial.dim();
    let nu = sol.controls.ncols();
    let nc = problem.state_constraints.len();
    let mut header = vec!["t".to_string()];
    header.extend(belief_columns(prefix, n));
    header.extend((0..nu).map(|i| format!("{prefix}u_{i}")));
    header.extend(
        problem
            .state_constraints
            .iter()
            .map(|c| format!("{prefix}backoff_{}", c.name)),
    );
    header.push(format!("{prefix}clearance"));
    let mut t = Table::new(header);
    let cl = clearance(problem, sol);
    for (k, (time, b)) in sol.trajectory.times.iter().zip(&sol.trajectory.beliefs).enumerate() {
        let mut row = vec![*time];
        row.extend(belief_values(b));
        if k < sol.controls.nrows() {
            row.extend(sol.controls.row(k).iter());
        } else {
            row.extend(std::iter::repeat_n(f64::NAN, nu));
        }
        if k == 0 {
            row.extend(std::iter::repeat_n(f64::NAN, nc));
        } else {
            row.extend(&sol.constraint_values[(k - 1) * nc..k * nc]);
        }
        row.push(cl[k]);
        t.push(row);
    }
    t
}

fn final_states_table(mc: &McReport) -> Table {
    let d = mc.final_states.first().map_or(0, Vec::len);
    let mut t = Table::new((0..d).map(|i| format!("x{i}")));
    for s in &mc.final_states {
        t.push(s.clone());
    }
    t
}

fn solution_json(planned: &Planned) -> Value {
    json!({
        "solution": planned.solution.summary_json(),
        "report": planned.report,
    })
}

/// Downrange maximization with floor and obstacle chance constraints.
pub fn quadcopter(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Table, Artifacts, PlanningReport)> {
    let bm = model_for(cfg)?;
    let problem = quadcopter_problem(&bm, cfg.p_level)?;
    let planned = plan(&problem, cfg, seed, &[problem.zero_controls()], Propagation::Normalization)?;
    let trace = solution_table(&problem, &planned.solution, "");
    let artifacts = vec![("solution.json".into(), Artifact::Json(solution_json(&planned)))];
    Ok((trace, artifacts, planned.report))
}

fn implicit_inits(problem: &OcpProblem) -> Vec<nalgebra::DMatrix<f64>> {
    vec![problem.zero_controls(), straight_line_controls(problem)]
}

/// Goal reaching around the strong-field region with the normalization
/// dynamics.
pub fn implicit_constraint(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Table, Artifacts, PlanningReport)> {
    let bm = model_for(cfg)?;
    let problem = implicit_constraint_problem(&bm)?;
    let planned = plan(&problem, cfg, seed, &implicit_inits(&problem), Propagation::Normalization)?;
    let trace = solution_table(&problem, &planned.solution, "");
    let mut artifacts = vec![("solution.json".into(), Artifact::Json(solution_json(&planned)))];
    if let Some(mc) = &planned.mc {
        artifacts.push(("mc_final_states.csv".into(), Artifact::Csv(final_states_table(mc))));
    }
    Ok((trace, artifacts, planned.report))
}

/// Side-by-side summary of the two planners.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub goal_fraction_normalization: Option<f64>,
    pub goal_fraction_baseline: Option<f64>,
    /// Knots `k ≥ 1` where both means lie in mode 2.
    pub compared_knots: Vec<usize>,
    /// Compared knots where the baseline clearance is not smaller.
    pub knots_baseline_not_closer: Vec<usize>,
    pub min_clearance_normalization: f64,
    pub min_clearance_baseline: f64,
}

pub fn compare(norm: &PlanningReport, base: &PlanningReport) -> Comparison {
    let compared: Vec<usize> = (1..norm.clearance.len())
        .filter(|&k| norm.clearance[k] > 0.0 && base.clearance[k] > 0.0)
        .collect();
    let not_closer = compared
        .iter()
        .copied()
        .filter(|&k| !(base.clearance[k] < norm.clearance[k]))
        .collect();
    let min = |c: &[f64]| c[1..].iter().copied().fold(f64::INFINITY, f64::min);
    Comparison {
        goal_fraction_normalization: norm.mc.as_ref().and_then(|m| m.goal_fraction),
        goal_fraction_baseline: base.mc.as_ref().and_then(|m| m.goal_fraction),
        compared_knots: compared,
        knots_baseline_not_closer: not_closer,
        min_clearance_normalization: min(&norm.clearance),
        min_clearance_baseline: min(&base.clearance),
    }
}

/// Normalization-based plan against the smoothed-linearization baseline,
/// both verified with the same open-loop samples.
pub fn compare_baseline(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Table, Artifacts, Value)> {
    let bm = model_for(cfg)?;
    let problem = implicit_constraint_problem(&bm)?;
    let inits = implicit_inits(&problem);
    let norm = plan(&problem, cfg, seed, &inits, Propagation::Normalization)?;
    let base = plan(
        &problem,
        cfg,
        seed,
        &inits,
        Propagation::Linearization {
            sigma_smooth: cfg.tolerances.sigma_smooth,
        },
    )?;
    let a = solution_table(&problem, &norm.solution, "");
    let b = solution_table(&problem, &base.solution, "base_");
    let mut trace = Table::new(
        a.header
            .iter()
            .cloned()
            .chain(b.header.iter().skip(1).cloned()),
    );
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        trace.push(ra.iter().chain(rb.iter().skip(1)).copied().collect());
    }
    let comparison = compare(&norm.report, &base.report);
    let mut artifacts = vec![
        ("normalization.json".to_string(), Artifact::Json(solution_json(&norm))),
        ("baseline.json".to_string(), Artifact::Json(solution_json(&base))),
    ];
    for (name, p) in [("normalization", &norm), ("baseline", &base)] {
        if let Some(mc) = &p.mc {
            artifacts.push((format!("{name}_mc_final_states.csv"), Artifact::Csv(final_states_table(mc))));
        }
    }
    let results = json!({
        "normalization": norm.report,
        "baseline": base.report,
        "comparison": comparison,
    });
    Ok((trace, artifacts, results))
}
