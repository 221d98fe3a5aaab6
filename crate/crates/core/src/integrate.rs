//! Fixed-step integrators.
//!
//! [`rk4_joint`] advances the smooth moment ODE in `(μ, Σ)`; no event handling
//! is needed there. [`integrate_sample`] advances a single nonsmooth sample
//! path, locating surface hits by bisection and switching to the Filippov
//! field while the sample is trapped on the surface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentRates;
use crate::systems::{symmetrized, GaussianBelief, PiecewiseSmoothModel};

/// Piecewise constant controls `u(t) = controls[⌊t / dt⌋]`, held at the last
/// value beyond the final interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    dt: f64,
    controls: Vec<DVector<f64>>,
    dim: usize,
}

impl ControlSchedule {
    /// For models without inputs.
    pub fn none() -> Self {
        Self::constant(DVector::zeros(0))
    }

    pub fn constant(u: DVector<f64>) -> Self {
        Self {
            dt: f64::INFINITY,
            dim: u.len(),
            controls: vec![u],
        }
    }

    pub fn new(dt: f64, controls: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("control interval must be positive, got {dt}")));
        }
        let Some(first) = controls.first() else {
            return Err(Error::Domain("control schedule is empty".into()));
        };
        let dim = first.len();
        if controls.iter().any(|u| u.len() != dim) {
            return Err(Error::DimensionMismatch("controls have differing lengths".into()));
        }
        if controls.iter().flat_map(|u| u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("control schedule contains non-finite values".into()));
        }
        Ok(Self { dt, controls, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> f64 {
        self.dt
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn index_at(&self, t: f64) -> usize {
        if !self.dt.is_finite() {
            return 0;
        }
        ((t / self.dt).floor().max(0.0) as usize).min(self.controls.len() - 1)
    }

    pub fn at(&self, t: f64) -> &DVector<f64> {
        &self.controls[self.index_at(t)]
    }

    /// Interior interval boundaries in `(0, t_final)`.
    fn boundaries(&self, t_final: f64) -> Vec<f64> {
        if !self.dt.is_finite() {
            return Vec::new();
        }
        (1..self.controls.len())
            .map(|j| j as f64 * self.dt)
            .filter(|&t| t < t_final)
            .collect()
    }
}

/// Beliefs at the integration knots, starting with the initial belief.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    pub times: Vec<f64>,
    pub beliefs: Vec<GaussianBelief>,
}

impl BeliefTrajectory {
    pub fn last(&self) -> &GaussianBelief {
        self.beliefs.last().expect("trajectory holds the initial belief")
    }
}

/// One classic RK4 step of the joint moment ODE; `Σ` is symmetrized on return.
pub fn rk4_belief_step<F>(
    rhs: &F,
    belief: &GaussianBelief,
    u: &DVector<f64>,
    h: f64,
) -> Result<GaussianBelief>
where
    F: Fn(&GaussianBelief, &DVector<f64>) -> Result<MomentRates> + ?Sized,
{
    let stage = |b: &GaussianBelief, k: &MomentRates, c: f64| GaussianBelief {
        mean: &b.mean + &k.mu_dot * c,
        cov: &b.cov + &k.sigma_dot * c,
    };
    let k1 = rhs(belief, u)?;
    let k2 = rhs(&stage(belief, &k1, 0.5 * h), u)?;
    let k3 = rhs(&stage(belief, &k2, 0.5 * h), u)?;
    let k4 = rhs(&stage(belief, &k3, h), u)?;
    let w = h / 6.0;
    let mean = &belief.mean + (k1.mu_dot + k2.mu_dot * 2.0 + k3.mu_dot * 2.0 + k4.mu_dot) * w;
    let cov = &belief.cov
        + (k1.sigma_dot + k2.sigma_dot * 2.0 + k3.sigma_dot * 2.0 + k4.sigma_dot) * w;
    Ok(GaussianBelief {
        mean,
        cov: symmetrized(&cov),
    })
}

/// Integrates the moment ODE `rhs` with `n_steps` equal RK4 steps over
/// `[0, t_final]`. Each step uses the control at its midpoint.
pub fn rk4_joint<F>(
    rhs: F,
    belief0: &GaussianBelief,
    schedule: &ControlSchedule,
    t_final: f64,
    n_steps: usize,
) -> Result<BeliefTrajectory>
where
    F: Fn(&GaussianBelief, &DVector<f64>) -> Result<MomentRates>,
{
    if n_steps == 0 {
        return Err(Error::Domain("at least one step is required".into()));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {t_final}")));
    }
    let h = t_final / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut beliefs = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    beliefs.push(belief0.clone());
    for k in 0..n_steps {
        let t = k as f64 * h;
        let next = rk4_belief_step(&rhs, &beliefs[k], schedule.at(t + 0.5 * h), h)?;
        if next.mean.iter().chain(next.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_valid_t: t });
        }
        times.push(if k + 1 == n_steps { t_final } else { (k + 1) as f64 * h });
        beliefs.push(next);
    }
    Ok(BeliefTrajectory { times, beliefs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    #[serde(rename = "crossing_1to2")]
    Crossing1To2,
    #[serde(rename = "crossing_2to1")]
    Crossing2To1,
    SlidingEntry,
    SlidingExit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t_s: f64,
    pub x_s: Vec<f64>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    /// Surface hits are located to `|ψ| ≤ switch_tol`.
    pub switch_tol: f64,
    pub max_events: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            switch_tol: 1e-10,
            max_events: 10_000,
        }
    }
}

/// A sample path on the nominal grid `0, h, 2h, ..., t_final`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub events: Vec<SwitchEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Mode1,
    Mode2,
    Sliding,
}

const GRAD_TOL: f64 = 1e-14;
const SLIDING_DEN_TOL: f64 = 1e-14;
const BISECTION_ITERS: usize = 200;

fn rk4<F>(f: &F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (0.5 * h)))?;
    let k3 = f(&(x + &k2 * (0.5 * h)))?;
    let k4 = f(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// `(∇ψᵀf1, ∇ψᵀf2)` at `x`.
fn normal_speeds<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (f64, f64, DVector<f64>) {
    let g = model.grad_psi(x);
    (g.dot(&model.f1(x, u)), g.dot(&model.f2(x, u)), g)
}

fn trapped(a1: f64, a2: f64) -> bool {
    a1 > 0.0 && a2 < 0.0
}

/// Convex weight of `f2` in the sliding field `(1 - θ) f1 + θ f2`,
/// `θ = ∇ψᵀf1 / ∇ψᵀ(f1 - f2)`. Errors outside the trapped regime.
pub fn filippov_theta<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let (a1, a2, _) = normal_speeds(model, x, u);
    let den = a1 - a2;
    if !(den.abs() >= SLIDING_DEN_TOL) {
        return Err(Error::DegenerateSliding(den.abs()));
    }
    let theta = a1 / den;
    if !(-1e-12..=1.0 + 1e-12).contains(&theta) {
        return Err(Error::Domain(format!(
            "not in the sliding regime: θ = {theta} (∇ψᵀf1 = {a1}, ∇ψᵀf2 = {a2})"
        )));
    }
    Ok(theta)
}

fn filippov_field<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (a1, a2, _) = normal_speeds(model, x, u);
    let den = a1 - a2;
    if !(den.abs() >= SLIDING_DEN_TOL) {
        return Err(Error::DegenerateSliding(den.abs()));
    }
    let theta = a1 / den;
    Ok(model.f1(x, u) * (1.0 - theta) + model.f2(x, u) * theta)
}

/// Sensitivity jump `∂x⁺/∂x⁻` across an event at `x_s`.
///
/// Crossings use `I + (f_to - f_from)∇ψᵀ / (∇ψᵀ f_from)`; sliding entry uses
/// `I + (f2 - f1)∇ψᵀ / (∇ψᵀ(f1 - f2))` from either side. The field is
/// continuous at a sliding exit, so that jump is the identity.
pub fn jump_matrix<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x_s: &DVector<f64>,
    u: &DVector<f64>,
    kind: EventKind,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let eye = DMatrix::identity(n, n);
    let g = model.grad_psi(x_s);
    let f1 = model.f1(x_s, u);
    let f2 = model.f2(x_s, u);
    let (num, den) = match kind {
        EventKind::Crossing1To2 => (&f2 - &f1, g.dot(&f1)),
        EventKind::Crossing2To1 => (&f1 - &f2, g.dot(&f2)),
        EventKind::SlidingEntry => (&f2 - &f1, g.dot(&(&f1 - &f2))),
        EventKind::SlidingExit => return Ok(eye),
    };
    if num.iter().all(|&v| v == 0.0) {
        return Ok(eye);
    }
    if !(den.abs() >= 1e-14) {
        return Err(Error::TangentialContact(den));
    }
    Ok(eye + num * g.transpose() / den)
}

fn nominal_grid(t_final: f64, h: f64) -> Vec<f64> {
    let n = ((t_final / h) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (1..n).map(|k| k as f64 * h).collect();
    grid.push(t_final);
    grid
}

/// Integrates one sample path of the switched system.
///
/// Inside a mode the smooth extension of that mode's field is integrated with
/// RK4. A step that ends across the surface is bisected (each trial
/// re-integrates the partial step) until `|ψ| ≤ switch_tol`. At the hit the
/// normal speeds `a_i = ∇ψᵀf_i` decide between a crossing and sliding
/// (`a1 > 0 > a2`); while sliding the state is projected back onto the surface
/// after every step. Steps are split at control-interval boundaries.
pub fn integrate_sample<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    schedule: &ControlSchedule,
    t_final: f64,
    h: f64,
    opts: &SampleOptions,
) -> Result<SampleTrajectory> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {t_final}")));
    }
    if !(opts.switch_tol > 0.0) {
        return Err(Error::Domain("switch tolerance must be positive".into()));
    }
    if x0.len() != model.state_dim() || schedule.dim() != model.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects state {} / control {}, got {} / {}",
            model.state_dim(),
            model.control_dim(),
            x0.len(),
            schedule.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state is not finite".into()));
    }

    let record = nominal_grid(t_final, h);
    let mut segments: Vec<(f64, bool)> = record.iter().map(|&t| (t, true)).collect();
    let eps_t = 1e-12 * t_final.max(1.0);
    for b in schedule.boundaries(t_final) {
        if segments.iter().all(|&(t, _)| (t - b).abs() > eps_t) {
            segments.push((b, false));
        }
    }
    segments.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut integrator = SampleIntegrator {
        model,
        tol: opts.switch_tol,
        max_events: opts.max_events,
        events: Vec::new(),
        grazes: 0,
    };
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut t = 0.0;
    let mut x = x0.clone();
    let mut phase = integrator.initial_phase(&x, schedule.at(0.0))?;

    for (t_end, keep) in segments {
        let u = schedule.at(0.5 * (t + t_end)).clone();
        while t < t_end {
            (t, x, phase) = integrator.advance(t, &x, phase, t_end, &u)?;
        }
        if keep {
            times.push(t_end);
            states.push(x.clone());
        }
    }
    Ok(SampleTrajectory {
        times,
        states,
        events: integrator.events,
    })
}

struct SampleIntegrator<'a, M: ?Sized> {
    model: &'a M,
    tol: f64,
    max_events: usize,
    events: Vec<SwitchEvent>,
    grazes: usize,
}

impl<M: PiecewiseSmoothModel + ?Sized> SampleIntegrator<'_, M> {
    fn psi(&self, x: &DVector<f64>) -> Result<f64> {
        let p = self.model.psi(x);
        if p.is_finite() {
            Ok(p)
        } else {
            Err(Error::ModelEvaluation(format!("psi = {p}")))
        }
    }

    fn initial_phase(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Phase> {
        let psi = self.psi(x)?;
        if psi.abs() > self.tol {
            return Ok(if psi < 0.0 { Phase::Mode1 } else { Phase::Mode2 });
        }
        let (a1, a2, _) = normal_speeds(self.model, x, u);
        Ok(if trapped(a1, a2) {
            Phase::Sliding
        } else if a1 > 0.0 && a2 > 0.0 {
            Phase::Mode2
        } else if (a1 < 0.0 && a2 < 0.0) || psi < 0.0 {
            Phase::Mode1
        } else {
            Phase::Mode2
        })
    }

    fn mode_step(
        &self,
        mode: Phase,
        x: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
    ) -> Result<DVector<f64>> {
        let f = |y: &DVector<f64>| {
            Ok(if mode == Phase::Mode1 {
                self.model.f1(y, u)
            } else {
                self.model.f2(y, u)
            })
        };
        rk4(&f, x, h)
    }

    fn sliding_step(&self, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let f = |y: &DVector<f64>| filippov_field(self.model, y, u);
        let mut y = rk4(&f, x, h)?;
        for _ in 0..8 {
            let psi = self.psi(&y)?;
            if psi.abs() <= 0.1 * self.tol {
                break;
            }
            let g = self.model.grad_psi(&y);
            let gg = g.norm_squared();
            if !(gg > 0.0) {
                break;
            }
            y -= g * (psi / gg);
        }
        Ok(y)
    }

    fn push_event(&mut self, t_s: f64, x_s: &DVector<f64>, kind: EventKind) -> Result<()> {
        if self.events.len() >= self.max_events {
            return Err(Error::EventBudget(self.max_events));
        }
        self.events.push(SwitchEvent {
            t_s,
            x_s: x_s.as_slice().to_vec(),
            kind,
        });
        Ok(())
    }

    /// Advances from `t` towards `t_end`, stopping early at an event.
    fn advance(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        phase: Phase,
        t_end: f64,
        u: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, Phase)> {
        let hs = t_end - t;
        let finite = |y: &DVector<f64>| {
            if y.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::Divergence { last_valid_t: t })
            }
        };
        if phase == Phase::Sliding {
            return self.advance_sliding(t, x, t_end, u);
        }
        // `side` maps ψ so that the current mode is negative.
        let side = if phase == Phase::Mode1 { 1.0 } else { -1.0 };
        let x_new = self.mode_step(phase, x, u, hs)?;
        finite(&x_new)?;
        let e_start = side * self.psi(x)?;
        let e_end = side * self.psi(&x_new)?;
        let crossed = e_end > self.tol || (e_end >= -self.tol && e_start.abs() > self.tol);
        if !crossed {
            return Ok((t_end, x_new, phase));
        }
        let (tau, x_s) = if e_end.abs() <= self.tol {
            (1.0, x_new)
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = (1.0, x_new, e_end.abs());
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let y = self.mode_step(phase, x, u, mid * hs)?;
                finite(&y)?;
                let e = side * self.psi(&y)?;
                if e.abs() < best.2 {
                    best = (mid, y.clone(), e.abs());
                }
                if e.abs() <= self.tol {
                    break;
                }
                if e > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            (best.0, best.1)
        };
        let t_s = if tau >= 1.0 { t_end } else { t + tau * hs };
        let next = self.classify(phase, t_s, &x_s, u)?;
        Ok((t_s, x_s, next))
    }

    fn classify(
        &mut self,
        from: Phase,
        t_s: f64,
        x_s: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<Phase> {
        let (a1, a2, g) = normal_speeds(self.model, x_s, u);
        if !(g.norm() >= GRAD_TOL) {
            return Err(Error::RegularityViolation { t: t_s });
        }
        let (next, kind) = match from {
            Phase::Mode1 if a2 > 0.0 => (Phase::Mode2, Some(EventKind::Crossing1To2)),
            Phase::Mode2 if a1 < 0.0 => (Phase::Mode1, Some(EventKind::Crossing2To1)),
            _ if trapped(a1, a2) => (Phase::Sliding, Some(EventKind::SlidingEntry)),
            // Tangential touch: the path stays in its mode.
            other => (other, None),
        };
        match kind {
            Some(kind) => self.push_event(t_s, x_s, kind)?,
            None => {
                self.grazes += 1;
                if self.grazes > self.max_events {
                    return Err(Error::EventBudget(self.max_events));
                }
            }
        }
        Ok(next)
    }

    fn advance_sliding(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        t_end: f64,
        u: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, Phase)> {
        let hs = t_end - t;
        let still_trapped = |y: &DVector<f64>| {
            let (a1, a2, _) = normal_speeds(self.model, y, u);
            trapped(a1, a2)
        };
        let leave_to = |y: &DVector<f64>| {
            let (a1, _, _) = normal_speeds(self.model, y, u);
            if a1 <= 0.0 {
                Phase::Mode1
            } else {
                Phase::Mode2
            }
        };
        if !still_trapped(x) {
            let next = leave_to(x);
            self.push_event(t, x, EventKind::SlidingExit)?;
            return Ok((t, x.clone(), next));
        }
        let x_new = self.sliding_step(x, u, hs)?;
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_valid_t: t });
        }
        if still_trapped(&x_new) {
            return Ok((t_end, x_new, Phase::Sliding));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x_hi = x_new;
        for _ in 0..BISECTION_ITERS {
            if (hi - lo) * hs <= 1e-3 * self.tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let y = self.sliding_step(x, u, mid * hs)?;
            if still_trapped(&y) {
                lo = mid;
            } else {
                hi = mid;
                x_hi = y;
            }
        }
        let t_exit = if hi >= 1.0 { t_end } else { t + hi * hs };
        let next = leave_to(&x_hi);
        self.push_event(t_exit, &x_hi, EventKind::SlidingExit)?;
        Ok((t_exit, x_hi, next))
    }
}
