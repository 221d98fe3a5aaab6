use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::integrate::{rk4_belief_step, rk4_joint};
use crate::moments::rhs_pws;
use crate::systems::{builtin_model, PiecewiseAffineSystem};

/// `ẋ = u` on both sides of `x = 5`, so the switch never matters.
struct Integrator;

impl PiecewiseSmoothModel for Integrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn f1(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn f2(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn psi(&self, x: &DVector<f64>) -> f64 {
        x[0] - 5.0
    }
    fn grad_psi(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}

fn integrator_problem(n: usize) -> OcpProblem {
    OcpProblem {
        model: Arc::new(Integrator),
        n_stages: n,
        h: 0.1,
        stage_cost: Arc::new(|_mu: &DVector<f64>, u: &DVector<f64>| u.norm_squared()),
        terminal_cost: Arc::new(|_mu: &DVector<f64>| 0.0),
        control_lower: DVector::from_element(1, -1.0),
        control_upper: DVector::from_element(1, 1.0),
        state_constraints: Vec::new(),
        p_level: 0.9,
        initial: GaussianBelief::scalar(0.0, 0.01).unwrap(),
        goal: None,
    }
}

#[test]
fn control_effort_only_gives_zero_controls() {
    let p = integrator_problem(5);
    let init = DMatrix::from_element(5, 1, 0.7);
    let s = solve(&p, &init, &OcpOptions::default()).unwrap();
    assert!(s.converged);
    assert!(s.controls.amax() < 1e-6, "{}", s.controls);
    assert!(s.objective.abs() < 1e-10);
}

#[test]
fn active_chance_constraint_is_backed_off() {
    // push x(T) right, but keep P(x_k ≤ 1) ≥ 0.9; Σ stays 0.01, so the mean
    // stops at 1 - Φ⁻¹(0.9)·0.1
    let mut p = integrator_problem(4);
    p.terminal_cost = Arc::new(|mu: &DVector<f64>| -mu[0]);
    p.stage_cost = Arc::new(|_mu: &DVector<f64>, u: &DVector<f64>| 1e-3 * u.norm_squared());
    p.control_upper[0] = 5.0;
    p.state_constraints = vec![StateConstraint {
        name: "cap".into(),
        h: Arc::new(|x: &DVector<f64>| x[0] - 1.0),
        grad: Arc::new(|_x: &DVector<f64>| DVector::from_element(1, 1.0)),
    }];
    let s = solve(&p, &p.zero_controls(), &OcpOptions::default()).unwrap();
    assert!(s.converged, "viol {} stat {}", s.max_violation, s.stationarity);
    let gamma = std_normal_inv_cdf(0.9).unwrap();
    let mu_t = s.trajectory.last().mean[0];
    assert!((mu_t - (1.0 - 0.1 * gamma)).abs() < 1e-5, "{mu_t}");
}

#[test]
fn rollout_matches_joint_integration() {
    let bm = builtin_model("quadcopter").unwrap();
    let p = quadcopter_problem(&bm, 0.9).unwrap();
    let controls = DMatrix::from_fn(p.n_stages, 2, |k, j| {
        if j == 0 {
            1.0
        } else {
            -0.5 + 0.05 * k as f64
        }
    });
    let r = rollout(&p, &controls, &OcpOptions::default(), Propagation::Normalization).unwrap();
    let sched = ControlSchedule::new(p.h, controls.row_iter().map(|r| r.transpose()).collect())
        .unwrap();
    let model = p.model.clone();
    let joint = rk4_joint(
        |b: &GaussianBelief, u: &DVector<f64>| rhs_pws(model.as_ref(), b, u),
        &p.initial,
        &sched,
        p.horizon(),
        p.n_stages,
    )
    .unwrap();
    for (a, b) in r.trajectory.beliefs.iter().zip(&joint.beliefs) {
        assert!((&a.mean - &b.mean).amax() < 1e-12);
        assert!((&a.cov - &b.cov).amax() < 1e-12);
    }
    assert_eq!(r.constraint_values.len(), 2 * p.n_stages);
}

#[test]
fn backoff_grows_with_probability_level() {
    let bm = builtin_model("quadcopter").unwrap();
    let controls = DMatrix::from_element(30, 2, 0.3);
    let mut prev: Option<Vec<f64>> = None;
    for p_level in [0.6, 0.9, 0.99, 0.999] {
        let p = quadcopter_problem(&bm, p_level).unwrap();
        let r = rollout(&p, &controls, &OcpOptions::default(), Propagation::Normalization).unwrap();
        if let Some(prev) = &prev {
            for (a, b) in prev.iter().zip(&r.constraint_values) {
                assert!(b > a);
            }
        }
        prev = Some(r.constraint_values);
    }
}

#[test]
fn backoff_reduces_to_mean_constraint_for_tiny_covariance() {
    let mut bm = builtin_model("quadcopter").unwrap();
    bm.initial = GaussianBelief::from_diag(&[0.0, -3.0, 5.0, 0.0], &[0.0; 4]).unwrap();
    let p = quadcopter_problem(&bm, 0.99).unwrap();
    let r = rollout(&p, &p.zero_controls(), &OcpOptions::default(), Propagation::Normalization)
        .unwrap();
    let gamma = p.gamma().unwrap();
    for (k, b) in r.trajectory.beliefs.iter().enumerate().skip(1) {
        for (i, c) in p.state_constraints.iter().enumerate() {
            let v = r.constraint_values[(k - 1) * 2 + i];
            let plain = (c.h)(&b.mean);
            assert!((v - plain).abs() <= 1.001 * gamma * 1e-7, "{v} {plain}");
        }
    }
}

#[test]
fn gradient_is_insensitive_to_step_scale() {
    let bm = builtin_model("quadcopter").unwrap();
    let p = quadcopter_problem(&bm, 0.9).unwrap();
    let controls = DMatrix::from_fn(p.n_stages, 2, |k, j| 0.5 - 0.1 * j as f64 + 0.01 * k as f64);
    let base = OcpOptions::default();
    let coarse = OcpOptions {
        fd_scale: 10.0,
        ..base
    };
    let g1 = objective_gradient(&p, &controls, &base, Propagation::Normalization).unwrap();
    let g10 = objective_gradient(&p, &controls, &coarse, Propagation::Normalization).unwrap();
    assert!((&g1 - &g10).norm() <= 1e-4 * g1.norm(), "{}", (&g1 - &g10).norm() / g1.norm());
}

#[test]
fn causal_gradient_matches_full_resimulation() {
    let p = integrator_problem(3);
    let mut q = p.clone();
    q.terminal_cost = Arc::new(|mu: &DVector<f64>| (mu[0] - 0.4).powi(2));
    let controls = DMatrix::from_column_slice(3, 1, &[0.2, -0.1, 0.5]);
    let opts = OcpOptions::default();
    let g = objective_gradient(&q, &controls, &opts, Propagation::Normalization).unwrap();
    // objective = h Σ u² + (h Σ u - 0.4)²
    let s: f64 = controls.iter().sum::<f64>() * 0.1;
    for k in 0..3 {
        let exact = 0.2 * controls[k] + 2.0 * (s - 0.4) * 0.1;
        assert!((g[k] - exact).abs() < 1e-8, "{k}: {} vs {exact}", g[k]);
    }
}

#[test]
fn baseline_equals_normalization_on_a_linear_system() {
    // one shared affine field, surface far away: both propagations are exact
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
    let f = DVector::from_column_slice(&[0.0, 0.0]);
    let sys = PiecewiseAffineSystem::new(
        a.clone(),
        a,
        f.clone(),
        f,
        DVector::from_column_slice(&[1.0, 0.0]),
        DVector::from_column_slice(&[-50.0, 0.0]),
    )
    .unwrap();
    struct Forced(PiecewiseAffineSystem);
    impl PiecewiseSmoothModel for Forced {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn f1(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            self.0.f1(x, &DVector::zeros(0)) + DVector::from_column_slice(&[0.0, u[0]])
        }
        fn f2(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            self.0.f2(x, &DVector::zeros(0)) + DVector::from_column_slice(&[0.0, u[0]])
        }
        fn psi(&self, x: &DVector<f64>) -> f64 {
            self.0.psi(x)
        }
        fn grad_psi(&self, x: &DVector<f64>) -> DVector<f64> {
            self.0.grad_psi(x)
        }
        fn jac_f1(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
            self.0.jac_f1(x, &DVector::zeros(0))
        }
        fn jac_f2(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
            self.0.jac_f2(x, &DVector::zeros(0))
        }
    }
    let goal = DVector::from_column_slice(&[1.0, 0.0]);
    let p = OcpProblem {
        model: Arc::new(Forced(sys)),
        n_stages: 10,
        h: 0.2,
        stage_cost: Arc::new(|_mu: &DVector<f64>, u: &DVector<f64>| 0.1 * u.norm_squared()),
        terminal_cost: Arc::new(move |mu: &DVector<f64>| (mu - &goal).norm_squared()),
        control_lower: DVector::from_element(1, -3.0),
        control_upper: DVector::from_element(1, 3.0),
        state_constraints: Vec::new(),
        p_level: 0.9,
        initial: GaussianBelief::from_diag(&[0.0, 0.0], &[0.01, 0.01]).unwrap(),
        goal: None,
    };
    let opts = OcpOptions {
        rk4_substeps: 4,
        ..OcpOptions::default()
    };
    let a = solve(&p, &p.zero_controls(), &opts).unwrap();
    let b = solve_baseline(&p, &p.zero_controls(), &opts, 0.05).unwrap();
    assert!(a.converged && b.converged);
    assert!((&a.controls - &b.controls).amax() < 1e-5);
    assert!((a.objective - b.objective).abs() < 1e-8);
}

#[test]
fn rejects_bad_controls_and_options() {
    let p = integrator_problem(3);
    let opts = OcpOptions::default();
    assert!(matches!(
        rollout(&p, &DMatrix::zeros(2, 1), &opts, Propagation::Normalization),
        Err(Error::DimensionMismatch(_))
    ));
    let mut q = p.clone();
    q.p_level = 0.4;
    assert!(matches!(
        rollout(&q, &q.zero_controls(), &opts, Propagation::Normalization),
        Err(Error::Config(_))
    ));
}

#[test]
fn quadcopter_plan_is_feasible_and_beats_hovering() {
    let bm = builtin_model("quadcopter").unwrap();
    let p = quadcopter_problem(&bm, 0.9).unwrap();
    let start = Instant::now();
    let s = solve(&p, &p.zero_controls(), &OcpOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let idle = rollout(&p, &p.zero_controls(), &OcpOptions::default(), Propagation::Normalization)
        .unwrap();
    eprintln!(
        "quadcopter: obj {} (idle {}), viol {:e}, stat {:e}, it {}, outer {}, {:?}",
        s.objective, idle.objective, s.max_violation, s.stationarity, s.iterations,
        s.outer_iterations, elapsed
    );
    assert!(s.max_violation <= 1e-6);
    assert!(s.objective < idle.objective);
    let mc = verify_solution_mc(&p, &s, 200, 7, 10).unwrap();
    assert_eq!(mc.satisfaction.len(), 2);
    assert_eq!(mc.satisfaction[0].len(), p.n_stages);
}

#[test]
fn single_stage_rollout_is_plain_simulation() {
    let bm = builtin_model("quadcopter").unwrap();
    let mut p = quadcopter_problem(&bm, 0.99).unwrap();
    p.n_stages = 1;
    p.stage_cost = Arc::new(|_mu: &DVector<f64>, _u: &DVector<f64>| 0.0);
    let r = rollout(&p, &p.zero_controls(), &OcpOptions::default(), Propagation::Normalization)
        .unwrap();
    let step = rk4_belief_step(
        &|b: &GaussianBelief, u: &DVector<f64>| rhs_pws(p.model.as_ref(), b, u),
        &p.initial,
        &DVector::zeros(2),
        p.h,
    )
    .unwrap();
    assert_eq!(r.objective, -step.mean[0]);
    assert!(r.objective < -p.initial.mean[0]);
}

#[test]
fn mc_report_is_empty_without_constraints_and_binary_without_noise() {
    let p = integrator_problem(4);
    let s = solve(&p, &p.zero_controls(), &OcpOptions::default()).unwrap();
    let mc = verify_solution_mc(&p, &s, 20, 1, 2).unwrap();
    assert!(mc.satisfaction.is_empty());
    assert_eq!(mc.min_satisfaction, None);

    let bm = builtin_model("quadcopter").unwrap();
    let mut bm = bm;
    bm.initial = GaussianBelief::from_diag(&[0.0, 1.0, 5.0, 0.0], &[0.0; 4]).unwrap();
    let q = quadcopter_problem(&bm, 0.9).unwrap();
    let controls = DMatrix::from_fn(q.n_stages, 2, |_, j| if j == 1 { -2.0 } else { 0.0 });
    let r = rollout(&q, &controls, &OcpOptions::default(), Propagation::Normalization).unwrap();
    let sol = OcpSolution {
        controls,
        trajectory: r.trajectory,
        objective: r.objective,
        constraint_values: r.constraint_values,
        max_violation: 0.0,
        stationarity: 0.0,
        multipliers: Vec::new(),
        iterations: 0,
        outer_iterations: 0,
        converged: false,
        min_cov_eig: 0.0,
        propagation: Propagation::Normalization,
    };
    let mc = verify_solution_mc(&q, &sol, 10, 3, 4).unwrap();
    let nominal = simulate_nominal(&q, &sol.controls, &q.initial.mean, 4).unwrap();
    for (i, c) in q.state_constraints.iter().enumerate() {
        for k in 1..=q.n_stages {
            let f = mc.satisfaction[i][k - 1];
            let expect = if (c.h)(&nominal[k]) <= 0.0 { 1.0 } else { 0.0 };
            assert_eq!(f, expect, "constraint {i} knot {k}");
        }
    }
    assert!(mc.min_satisfaction == Some(0.0), "controls chosen to break the floor");
}
