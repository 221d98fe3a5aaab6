//! Chance-constrained optimal control on the belief dynamics.
//!
//! Single shooting: the decision variables are the piecewise constant
//! controls, and every evaluation rolls the belief forward from the fixed
//! initial distribution. The chance constraints `P(hⁱ(x_k) ≤ 0) ≥ p` are
//! replaced by the backoff form `hⁱ(μ_k) + γ√(∇hⁱᵀΣ_k∇hⁱ) ≤ 0`,
//! `γ = Φ⁻¹(p)`, and handled by a PHR augmented Lagrangian around a projected
//! BFGS inner solver for the control box. Gradients are central differences
//! of the augmented Lagrangian; a perturbation of `u_k` only re-simulates
//! stages `k..N`.

mod problems;
mod solver;

pub use problems::{implicit_constraint_problem, quadcopter_problem, straight_line_controls};
pub use solver::{project, projected_bfgs, stationarity, InnerResult};

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussmath::{quad_form, std_normal_inv_cdf};
use crate::integrate::{
    integrate_sample, rk4_belief_step, BeliefTrajectory, ControlSchedule, SampleOptions,
};
use crate::moments::{baseline_dt, rhs_pws_with, MomentOptions};
use crate::montecarlo::{draw_samples, propagate_cloud};
use crate::systems::{fd_step, smoothed_unchecked, GaussianBelief, PiecewiseSmoothModel};

pub type StageCost = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type TerminalCost = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type StateGrad = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `hⁱ(x) ≤ 0` with its gradient.
#[derive(Clone)]
pub struct StateConstraint {
    pub name: String,
    pub h: StateFn,
    pub grad: StateGrad,
}

/// Target region used when verifying a solution by sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub position: DVector<f64>,
    pub radius: f64,
}

#[derive(Clone)]
pub struct OcpProblem {
    pub model: Arc<dyn PiecewiseSmoothModel>,
    pub n_stages: usize,
    pub h: f64,
    pub stage_cost: StageCost,
    pub terminal_cost: TerminalCost,
    pub control_lower: DVector<f64>,
    pub control_upper: DVector<f64>,
    pub state_constraints: Vec<StateConstraint>,
    pub p_level: f64,
    pub initial: GaussianBelief,
    pub goal: Option<Goal>,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<()> {
        let nu = self.model.control_dim();
        let mut errs = Vec::new();
        if self.n_stages == 0 {
            errs.push("at least one stage is required".to_string());
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            errs.push(format!("step must be positive, got {}", self.h));
        }
        if !(self.p_level > 0.5 && self.p_level < 1.0) {
            errs.push(format!("probability level must lie in (1/2, 1), got {}", self.p_level));
        }
        if self.control_lower.len() != nu || self.control_upper.len() != nu {
            errs.push(format!("control bounds must have {nu} entries"));
        } else if (0..nu).any(|i| !(self.control_lower[i] <= self.control_upper[i])) {
            errs.push("control lower bound exceeds upper bound".into());
        }
        if self.initial.dim() != self.model.state_dim() {
            errs.push("initial belief does not match the state dimension".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn gamma(&self) -> Result<f64> {
        std_normal_inv_cdf(self.p_level)
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.n_stages as f64
    }

    pub fn zero_controls(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.n_stages, self.model.control_dim())
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let nu = self.model.control_dim();
        let n = self.n_stages * nu;
        (
            DVector::from_fn(n, |i, _| self.control_lower[i % nu]),
            DVector::from_fn(n, |i, _| self.control_upper[i % nu]),
        )
    }
}

/// How the belief is advanced over one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Propagation {
    /// RK4 on the normalization-based moment dynamics.
    Normalization,
    /// Discrete Lyapunov step through RK4 of the tanh-smoothed field.
    Linearization { sigma_smooth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// `None` means `1e-6 (1 + |objective|)`.
    pub tol_stat: Option<f64>,
    pub tol_feas: f64,
    pub rk4_substeps: usize,
    /// Multiplier on the default finite-difference step.
    pub fd_scale: f64,
    pub rho0: f64,
    pub rho_max: f64,
    pub moments: MomentOptions,
}

impl Default for OcpOptions {
    fn default() -> Self {
        Self {
            max_outer: 30,
            max_inner: 500,
            tol_stat: None,
            tol_feas: 1e-6,
            rk4_substeps: 1,
            fd_scale: 1.0,
            rho0: 10.0,
            rho_max: 1e10,
            moments: MomentOptions::default(),
        }
    }
}

/// Result of simulating the belief under fixed controls.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: BeliefTrajectory,
    pub objective: f64,
    /// Backoff values, knot-major: entry `(k - 1) * n_c + i` is constraint `i`
    /// at knot `k` for `k = 1..=N`.
    pub constraint_values: Vec<f64>,
    /// Smallest covariance eigenvalue along the trajectory; negative values
    /// are reported, not clipped.
    pub min_cov_eig: f64,
}

/// Radicand floor of the backoff term; keeps the square root differentiable.
const BACKOFF_FLOOR: f64 = 1e-14;

struct Trace {
    beliefs: Vec<GaussianBelief>,
    stage_costs: Vec<f64>,
    terminal: f64,
    /// per knot `1..=N`, `n_c` values each
    constraints: Vec<Vec<f64>>,
}

struct Evaluator<'a> {
    problem: &'a OcpProblem,
    opts: &'a OcpOptions,
    prop: Propagation,
    gamma: f64,
    nu: usize,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a OcpProblem, opts: &'a OcpOptions, prop: Propagation) -> Result<Self> {
        problem.validate()?;
        if opts.rk4_substeps == 0 {
            return Err(Error::Domain("rk4_substeps must be at least 1".into()));
        }
        if let Propagation::Linearization { sigma_smooth } = prop {
            if !(sigma_smooth > 0.0) {
                return Err(Error::Domain("smoothing parameter must be positive".into()));
            }
        }
        Ok(Self {
            problem,
            opts,
            prop,
            gamma: problem.gamma()?,
            nu: problem.model.control_dim(),
        })
    }

    fn control(&self, z: &DVector<f64>, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&z.as_slice()[k * self.nu..(k + 1) * self.nu])
    }

    /// Advances stage `k` (knot `k` to `k + 1`).
    fn step(&self, k: usize, b: &GaussianBelief, u: &DVector<f64>) -> Result<GaussianBelief> {
        let m = self.opts.rk4_substeps;
        let dt = self.problem.h / m as f64;
        let model = self.problem.model.as_ref();
        let mut cur = b.clone();
        for _ in 0..m {
            cur = match self.prop {
                Propagation::Normalization => {
                    let rhs = |bb: &GaussianBelief, uu: &DVector<f64>| {
                        rhs_pws_with(model, bb, uu, &self.opts.moments)
                    };
                    rk4_belief_step(&rhs, &cur, u, dt)
                }
                Propagation::Linearization { sigma_smooth } => {
                    let f = |x: &DVector<f64>| smoothed_unchecked(model, x, u, sigma_smooth);
                    let map = |x: &DVector<f64>| {
                        let k1 = f(x);
                        let k2 = f(&(x + &k1 * (0.5 * dt)));
                        let k3 = f(&(x + &k2 * (0.5 * dt)));
                        let k4 = f(&(x + &k3 * dt));
                        Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
                    };
                    baseline_dt(map, &cur)
                }
            }
            .map_err(|e| match e {
                Error::ModelEvaluation(_) | Error::Divergence { .. } => {
                    Error::StageDivergence { stage: k }
                }
                other => other,
            })?;
            if cur.mean.iter().chain(cur.cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::StageDivergence { stage: k });
            }
        }
        Ok(cur)
    }

    fn backoffs(&self, b: &GaussianBelief) -> Vec<f64> {
        self.problem
            .state_constraints
            .iter()
            .map(|c| {
                let g = (c.grad)(&b.mean);
                (c.h)(&b.mean) + self.gamma * quad_form(&b.cov, &g).max(BACKOFF_FLOOR).sqrt()
            })
            .collect()
    }

    /// Rolls out from knot `k0` of `base` (or from the start if `base` is
    /// `None`) with controls `z`.
    fn trace_from(&self, z: &DVector<f64>, base: Option<(&Trace, usize)>) -> Result<Trace> {
        let n = self.problem.n_stages;
        let (mut beliefs, mut stage_costs, mut constraints, k0) = match base {
            Some((t, k0)) => (
                t.beliefs[..=k0].to_vec(),
                t.stage_costs[..k0].to_vec(),
                t.constraints[..k0].to_vec(),
                k0,
            ),
            None => (vec![self.problem.initial.clone()], Vec::new(), Vec::new(), 0),
        };
        for k in k0..n {
            let u = self.control(z, k);
            let b = &beliefs[k];
            stage_costs.push(self.problem.h * (self.problem.stage_cost)(&b.mean, &u));
            let next = self.step(k, b, &u)?;
            constraints.push(self.backoffs(&next));
            beliefs.push(next);
        }
        let terminal = (self.problem.terminal_cost)(&beliefs[n].mean);
        Ok(Trace {
            beliefs,
            stage_costs,
            terminal,
            constraints,
        })
    }

    fn objective(t: &Trace) -> f64 {
        t.stage_costs.iter().sum::<f64>() + t.terminal
    }

    fn al_value(t: &Trace, lambda: &[f64], rho: f64) -> f64 {
        let penalty: f64 = t
            .constraints
            .iter()
            .flatten()
            .zip(lambda)
            .map(|(&c, &l)| ((l + rho * c).max(0.0).powi(2) - l * l) / (2.0 * rho))
            .sum();
        Self::objective(t) + penalty
    }

    fn al_grad(&self, z: &DVector<f64>, lambda: &[f64], rho: f64) -> Result<DVector<f64>> {
        let base = self.trace_from(z, None)?;
        let parts: Vec<Result<f64>> = (0..z.len())
            .into_par_iter()
            .map(|j| {
                let k0 = j / self.nu;
                let h = self.opts.fd_scale * fd_step(z[j]);
                let (zp, zm) = (z[j] + h, z[j] - h);
                let mut y = z.clone();
                y[j] = zp;
                let fp = Self::al_value(&self.trace_from(&y, Some((&base, k0)))?, lambda, rho);
                y[j] = zm;
                let fm = Self::al_value(&self.trace_from(&y, Some((&base, k0)))?, lambda, rho);
                Ok((fp - fm) / (zp - zm))
            })
            .collect();
        let mut g = DVector::zeros(z.len());
        for (j, p) in parts.into_iter().enumerate() {
            g[j] = p?;
        }
        Ok(g)
    }

    fn rollout(&self, z: &DVector<f64>) -> Result<Rollout> {
        let t = self.trace_from(z, None)?;
        let n = self.problem.n_stages;
        let times = (0..=n).map(|k| k as f64 * self.problem.h).collect();
        let min_cov_eig = t
            .beliefs
            .iter()
            .map(|b| b.min_eigenvalue())
            .fold(f64::INFINITY, f64::min);
        Ok(Rollout {
            objective: Self::objective(&t),
            constraint_values: t.constraints.iter().flatten().copied().collect(),
            trajectory: BeliefTrajectory {
                times,
                beliefs: t.beliefs,
            },
            min_cov_eig,
        })
    }
}

fn flatten(controls: &DMatrix<f64>) -> DVector<f64> {
    // row-major: stage by stage
    DVector::from_iterator(
        controls.len(),
        (0..controls.nrows()).flat_map(|k| (0..controls.ncols()).map(move |j| controls[(k, j)])),
    )
}

fn unflatten(z: &DVector<f64>, n: usize, nu: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, nu, z.as_slice())
}

fn check_controls(problem: &OcpProblem, controls: &DMatrix<f64>) -> Result<()> {
    if controls.nrows() != problem.n_stages || controls.ncols() != problem.model.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "controls must be {} x {}, got {} x {}",
            problem.n_stages,
            problem.model.control_dim(),
            controls.nrows(),
            controls.ncols()
        )));
    }
    if controls.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("controls must be finite".into()));
    }
    Ok(())
}

/// Simulates the belief under `controls` (`N × n_u`, row `k` applied on
/// stage `k`). Bounds are not enforced here.
pub fn rollout(
    problem: &OcpProblem,
    controls: &DMatrix<f64>,
    opts: &OcpOptions,
    prop: Propagation,
) -> Result<Rollout> {
    check_controls(problem, controls)?;
    Evaluator::new(problem, opts, prop)?.rollout(&flatten(controls))
}

/// Central-difference gradient of the objective with respect to the
/// flattened controls; `fd_scale` multiplies the default step.
pub fn objective_gradient(
    problem: &OcpProblem,
    controls: &DMatrix<f64>,
    opts: &OcpOptions,
    prop: Propagation,
) -> Result<DVector<f64>> {
    check_controls(problem, controls)?;
    let ev = Evaluator::new(problem, opts, prop)?;
    let z = flatten(controls);
    let base = ev.trace_from(&z, None)?;
    let parts: Vec<Result<f64>> = (0..z.len())
        .into_par_iter()
        .map(|j| {
            let k0 = j / ev.nu;
            let h = opts.fd_scale * fd_step(z[j]);
            let (zp, zm) = (z[j] + h, z[j] - h);
            let mut y = z.clone();
            y[j] = zp;
            let fp = Evaluator::objective(&ev.trace_from(&y, Some((&base, k0)))?);
            y[j] = zm;
            let fm = Evaluator::objective(&ev.trace_from(&y, Some((&base, k0)))?);
            Ok((fp - fm) / (zp - zm))
        })
        .collect();
    let mut g = DVector::zeros(z.len());
    for (j, p) in parts.into_iter().enumerate() {
        g[j] = p?;
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub controls: DMatrix<f64>,
    pub trajectory: BeliefTrajectory,
    pub objective: f64,
    pub constraint_values: Vec<f64>,
    pub max_violation: f64,
    pub stationarity: f64,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub min_cov_eig: f64,
    pub propagation: Propagation,
}

impl OcpSolution {
    /// Controls, objective and solver diagnostics.
    pub fn summary_json(&self) -> serde_json::Value {
        let controls: Vec<Vec<f64>> = self
            .controls
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        serde_json::json!({
            "propagation": self.propagation,
            "controls": controls,
            "objective": self.objective,
            "max_violation": self.max_violation,
            "stationarity": self.stationarity,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "min_cov_eigenvalue": self.min_cov_eig,
        })
    }

    /// One row per knot: `t, mu_*, Sigma_ij` (row-major), then `u_*` (empty
    /// on the final knot).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.trajectory.beliefs.first().map_or(0, |b| b.dim());
        let nu = self.controls.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("mu_{i}")));
        header.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("Sigma_{i}{j}"))));
        header.extend((0..nu).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, b)) in self.trajectory.times.iter().zip(&self.trajectory.beliefs).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(b.mean.iter().map(|v| v.to_string()));
            row.extend((0..n).flat_map(|i| (0..n).map(move |j| b.cov[(i, j)].to_string())));
            if k < self.controls.nrows() {
                row.extend(self.controls.row(k).iter().map(|v| v.to_string()));
            } else {
                row.extend((0..nu).map(|_| String::new()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Solves with normalization-based propagation.
pub fn solve(
    problem: &OcpProblem,
    init_controls: &DMatrix<f64>,
    opts: &OcpOptions,
) -> Result<OcpSolution> {
    solve_with(problem, init_controls, opts, Propagation::Normalization)
}

/// Solves with the smoothed-linearization baseline propagation.
pub fn solve_baseline(
    problem: &OcpProblem,
    init_controls: &DMatrix<f64>,
    opts: &OcpOptions,
    sigma_smooth: f64,
) -> Result<OcpSolution> {
    solve_with(
        problem,
        init_controls,
        opts,
        Propagation::Linearization { sigma_smooth },
    )
}

/// Augmented Lagrangian outer loop with multiplier update
/// `λ ← max(0, λ + ρc)`; `ρ` grows tenfold whenever the violation fails to
/// drop below a quarter of its previous value.
pub fn solve_with(
    problem: &OcpProblem,
    init_controls: &DMatrix<f64>,
    opts: &OcpOptions,
    prop: Propagation,
) -> Result<OcpSolution> {
    check_controls(problem, init_controls)?;
    let ev = Evaluator::new(problem, opts, prop)?;
    let (lo, hi) = problem.bounds();
    let m = problem.n_stages * problem.state_constraints.len();
    let mut lambda = vec![0.0; m];
    let mut rho = opts.rho0;
    let mut z = project(&flatten(init_controls), &lo, &hi);
    let mut prev_viol = f64::INFINITY;
    let mut iterations = 0;
    let mut outer_iterations = 0;
    let mut converged = false;
    let mut stat = f64::INFINITY;
    let tol_stat = |f: f64| opts.tol_stat.unwrap_or(1e-6 * (1.0 + f.abs()));

    let mut objective = Evaluator::objective(&ev.trace_from(&z, None)?);
    for outer in 0..opts.max_outer.max(1) {
        outer_iterations = outer + 1;
        let target = tol_stat(objective);
        let omega = if m == 0 {
            target
        } else {
            target.max(1e-2 * 0.1f64.powi(outer as i32) * (1.0 + objective.abs()))
        };
        let lam = lambda.clone();
        let value = |y: &DVector<f64>| Ok(Evaluator::al_value(&ev.trace_from(y, None)?, &lam, rho));
        let grad = |y: &DVector<f64>| ev.al_grad(y, &lam, rho);
        let inner = projected_bfgs(value, grad, &z, &lo, &hi, omega, opts.max_inner)?;
        iterations += inner.iterations;
        z = inner.z;
        stat = inner.stationarity;

        let t = ev.trace_from(&z, None)?;
        objective = Evaluator::objective(&t);
        let c: Vec<f64> = t.constraints.iter().flatten().copied().collect();
        let viol = c.iter().fold(0.0f64, |a, &v| a.max(v));
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l = (*l + rho * ci).max(0.0);
        }
        if viol <= opts.tol_feas && stat <= tol_stat(objective) {
            converged = true;
            break;
        }
        if m == 0 && inner.iterations == 0 {
            break;
        }
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(opts.rho_max);
        }
        prev_viol = viol;
    }

    let r = ev.rollout(&z)?;
    let max_violation = r.constraint_values.iter().fold(0.0f64, |a, &v| a.max(v));
    Ok(OcpSolution {
        controls: unflatten(&z, problem.n_stages, ev.nu),
        trajectory: r.trajectory,
        objective: r.objective,
        constraint_values: r.constraint_values,
        max_violation,
        stationarity: stat,
        multipliers: lambda,
        iterations,
        outer_iterations,
        converged,
        min_cov_eig: r.min_cov_eig,
        propagation: prop,
    })
}

/// Solves from each initial guess and keeps the lowest objective among the
/// feasible results (or the least violating one if none is feasible).
pub fn solve_multistart(
    problem: &OcpProblem,
    inits: &[DMatrix<f64>],
    opts: &OcpOptions,
    prop: Propagation,
) -> Result<OcpSolution> {
    let mut best: Option<OcpSolution> = None;
    for init in inits {
        let s = solve_with(problem, init, opts, prop)?;
        let better = match &best {
            None => true,
            Some(b) => {
                let (sf, bf) = (s.max_violation <= opts.tol_feas, b.max_violation <= opts.tol_feas);
                match (sf, bf) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => s.objective < b.objective,
                    (false, false) => s.max_violation < b.max_violation,
                }
            }
        };
        if better {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Domain("no initial guess given".into()))
}

/// Open-loop sampling check of a solution under the true switched dynamics.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub n_samples: usize,
    pub seed: u64,
    /// `satisfaction[i][k - 1]`: fraction of samples with `hⁱ(x_k) ≤ 0`.
    pub satisfaction: Vec<Vec<f64>>,
    pub min_satisfaction: Option<f64>,
    pub goal_fraction: Option<f64>,
    pub final_states: Vec<Vec<f64>>,
}

/// Propagates `n_samples` initial draws with the optimal controls, using
/// `sample_substeps` integrator steps per stage.
pub fn verify_solution_mc(
    problem: &OcpProblem,
    solution: &OcpSolution,
    n_samples: usize,
    seed: u64,
    sample_substeps: usize,
) -> Result<McReport> {
    check_controls(problem, &solution.controls)?;
    if sample_substeps == 0 {
        return Err(Error::Domain("sample_substeps must be at least 1".into()));
    }
    let cloud = draw_samples(&problem.initial, n_samples, seed)?;
    let controls = solution
        .controls
        .row_iter()
        .map(|r| r.transpose())
        .collect::<Vec<_>>();
    let schedule = if controls.first().is_some_and(|u| !u.is_empty()) {
        ControlSchedule::new(problem.h, controls)?
    } else {
        ControlSchedule::none()
    };
    let hs = problem.h / sample_substeps as f64;
    let paths = propagate_cloud(
        problem.model.as_ref(),
        &cloud,
        &schedule,
        problem.horizon(),
        hs,
        &SampleOptions::default(),
    )?;
    let n = problem.n_stages;
    let satisfaction: Vec<Vec<f64>> = problem
        .state_constraints
        .iter()
        .map(|c| {
            (1..=n)
                .map(|k| {
                    let cl = &paths.clouds[k * sample_substeps];
                    let ok = (0..cl.len()).filter(|&r| (c.h)(&cl.row(r)) <= 0.0).count();
                    ok as f64 / cl.len() as f64
                })
                .collect()
        })
        .collect();
    let min_satisfaction = satisfaction
        .iter()
        .flatten()
        .copied()
        .min_by(f64::total_cmp);
    let last = paths.clouds.last().expect("grid has a final knot");
    let goal_fraction = problem.goal.as_ref().map(|g| {
        let k = g.position.len();
        let hit = (0..last.len())
            .filter(|&r| (last.row(r).rows(0, k) - &g.position).norm() <= g.radius)
            .count();
        hit as f64 / last.len() as f64
    });
    Ok(McReport {
        n_samples,
        seed,
        satisfaction,
        min_satisfaction,
        goal_fraction,
        final_states: (0..last.len()).map(|r| last.row(r).as_slice().to_vec()).collect(),
    })
}

/// Integrates a single state (e.g. the mean) through the switched dynamics
/// with the solution's controls.
pub fn simulate_nominal(
    problem: &OcpProblem,
    controls: &DMatrix<f64>,
    x0: &DVector<f64>,
    sample_substeps: usize,
) -> Result<Vec<DVector<f64>>> {
    check_controls(problem, controls)?;
    let sched = ControlSchedule::new(problem.h, controls.row_iter().map(|r| r.transpose()).collect())?;
    let tr = integrate_sample(
        problem.model.as_ref(),
        x0,
        &sched,
        problem.horizon(),
        problem.h / sample_substeps.max(1) as f64,
        &SampleOptions::default(),
    )?;
    Ok(tr.states.into_iter().step_by(sample_substeps.max(1)).collect())
}

#[cfg(test)]
mod tests;
