//! Planning problems on the built-in models.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Goal, OcpProblem, StateConstraint};
use crate::error::{Error, Result};
use crate::systems::{BuiltinModel, ImplicitConstraint, Quadcopter};

fn require(bm: &BuiltinModel, name: &str) -> Result<()> {
    if bm.name == name {
        Ok(())
    } else {
        Err(Error::Config(vec![format!(
            "expected the `{name}` model, got `{}`",
            bm.name
        )]))
    }
}

/// Maximize downrange distance `p_x(T)` under a floor and a hill-shaped
/// obstacle, each held with probability `p_level`.
pub fn quadcopter_problem(bm: &BuiltinModel, p_level: f64) -> Result<OcpProblem> {
    require(bm, "quadcopter")?;
    let eps_u = bm.scalar("eps_u");
    let u_max = bm.scalar("u_max");
    let p_y_min = bm.scalar("p_y_min");
    let center = bm.scalar("obstacle_center");
    let coeff = bm.scalar("obstacle_coeff");
    let floor = StateConstraint {
        name: "floor".into(),
        h: Arc::new(move |x: &DVector<f64>| p_y_min - x[1]),
        grad: Arc::new(|_x: &DVector<f64>| DVector::from_column_slice(&[0.0, -1.0, 0.0, 0.0])),
    };
    let obstacle = StateConstraint {
        name: "obstacle".into(),
        h: Arc::new(move |x: &DVector<f64>| -coeff * (x[0] - center).powi(2) - x[1]),
        grad: Arc::new(move |x: &DVector<f64>| {
            DVector::from_column_slice(&[-2.0 * coeff * (x[0] - center), -1.0, 0.0, 0.0])
        }),
    };
    Ok(OcpProblem {
        model: Arc::new(Quadcopter {
            drag: bm.scalar("drag"),
            wind: bm.scalar("wind"),
        }),
        n_stages: bm.steps,
        h: bm.horizon / bm.steps as f64,
        stage_cost: Arc::new(move |mu: &DVector<f64>, u: &DVector<f64>| {
            -mu[0] + eps_u * u.norm_squared()
        }),
        terminal_cost: Arc::new(|mu: &DVector<f64>| -mu[0]),
        control_lower: DVector::from_element(2, -u_max),
        control_upper: DVector::from_element(2, u_max),
        state_constraints: vec![floor, obstacle],
        p_level,
        initial: bm.initial.clone(),
        goal: None,
    })
}

/// Reach the goal across the strong-field region; no state constraints, a
/// smoothed distance cost.
pub fn implicit_constraint_problem(bm: &BuiltinModel) -> Result<OcpProblem> {
    require(bm, "implicit_constraint")?;
    let eps_u = bm.scalar("eps_u");
    let eps_h2 = bm.scalar("eps_huber").powi(2);
    let u_max = bm.scalar("u_max");
    let field = bm.vector("field");
    let goal = DVector::from_vec(bm.vector("goal"));
    if goal.len() != 2 {
        return Err(Error::Config(vec!["goal must have 2 entries".into()]));
    }
    let g1 = goal.clone();
    let g2 = goal.clone();
    Ok(OcpProblem {
        model: Arc::new(ImplicitConstraint {
            u_max,
            field: [field[0], field[1]],
        }),
        n_stages: bm.steps,
        h: bm.horizon / bm.steps as f64,
        stage_cost: Arc::new(move |mu: &DVector<f64>, u: &DVector<f64>| {
            ((mu - &g1).norm_squared() + eps_h2).sqrt() + eps_u * u.norm_squared()
        }),
        terminal_cost: Arc::new(move |mu: &DVector<f64>| ((mu - &g2).norm_squared() + eps_h2).sqrt()),
        control_lower: DVector::from_element(2, -u_max),
        control_upper: DVector::from_element(2, u_max),
        state_constraints: Vec::new(),
        p_level: 0.99,
        initial: bm.initial.clone(),
        goal: Some(Goal {
            position: goal,
            radius: bm.scalar("goal_radius"),
        }),
    })
}

/// Constant control heading straight from the initial mean to the goal,
/// clipped to the box. Falls back to zeros without a goal.
pub fn straight_line_controls(problem: &OcpProblem) -> DMatrix<f64> {
    let nu = problem.control_lower.len();
    let Some(goal) = &problem.goal else {
        return problem.zero_controls();
    };
    let k = goal.position.len().min(nu);
    let mut u = DVector::zeros(nu);
    for i in 0..k {
        u[i] = ((goal.position[i] - problem.initial.mean[i]) / problem.horizon())
            .clamp(problem.control_lower[i], problem.control_upper[i]);
    }
    DMatrix::from_fn(problem.n_stages, nu, |_, j| u[j])
}
