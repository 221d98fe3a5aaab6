//! Scalar crossing experiments on `ẋ = f̄1` (x < 0), `ẋ = f̄2` (x > 0).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{loglog_slope, Artifact, Artifacts, Table};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gaussmath::{big_phi, phi};
use crate::integrate::{
    integrate_sample, rk4_joint, BeliefTrajectory, ControlSchedule, SampleOptions,
};
use crate::moments::{rhs_pwc_1d, MomentRates};
use crate::montecarlo::{crossing_reference_1d, draw_samples, empirical_moments, propagate_cloud};
use crate::systems::{BuiltinModel, GaussianBelief, PiecewiseConstant1D};

/// Standardized distance below which the crossing is considered in progress:
/// `Φ(-6) < 1e-9` of the mass sits on the far side outside it.
pub const CROSSING_Z: f64 = 6.0;

struct Setup {
    sys: PiecewiseConstant1D,
    mu0: f64,
    sigma0: f64,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let bm = BuiltinModel::from_params(&cfg.model, &cfg.params)?;
    let sys = *bm
        .constant()
        .ok_or_else(|| Error::Config(vec![format!("model `{}` is not scalar", cfg.model)]))?;
    Ok(Setup {
        sys,
        mu0: bm.scalar("mu0"),
        sigma0: bm.scalar("sigma0"),
    })
}

fn sample_options(cfg: &ExperimentConfig) -> SampleOptions {
    SampleOptions {
        switch_tol: cfg.tolerances.switch_tol,
        max_events: cfg.tolerances.max_events,
    }
}

/// RK4 on the scalar piecewise constant moment dynamics.
pub(crate) fn scalar_belief_trajectory(
    sys: &PiecewiseConstant1D,
    mu0: f64,
    sigma0: f64,
    t_final: f64,
    steps: usize,
) -> Result<BeliefTrajectory> {
    let rhs = |b: &GaussianBelief, _u: &DVector<f64>| {
        let (m, v) = rhs_pwc_1d(sys, b.mean[0], b.cov[(0, 0)])?;
        Ok(MomentRates {
            mu_dot: DVector::from_element(1, m),
            sigma_dot: DMatrix::from_element(1, 1, v),
            jac: DMatrix::zeros(1, 1),
        })
    };
    rk4_joint(
        rhs,
        &GaussianBelief::scalar(mu0, sigma0 * sigma0)?,
        &ControlSchedule::none(),
        t_final,
        steps,
    )
}

/// Belief trace against the exact switched-normal moments.
fn error_trace(
    s: &Setup,
    tr: &BeliefTrajectory,
) -> Result<(Table, Vec<f64>)> {
    let mut table = Table::new([
        "t",
        "mu_0",
        "Sigma_00",
        "ref_mu_0",
        "ref_Sigma_00",
        "err_mean",
        "err_cov",
    ]);
    let mut errs = Vec::with_capacity(tr.times.len());
    for (t, b) in tr.times.iter().zip(&tr.beliefs) {
        let (rm, rv) = crossing_reference_1d(&s.sys, s.mu0, s.sigma0, *t)?;
        let (m, v) = (b.mean[0], b.cov[(0, 0)]);
        errs.push(m - rm);
        table.push(vec![*t, m, v, rm, rv, m - rm, v - rv]);
    }
    Ok((table, errs))
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    /// Switching time of the trajectory started at the mean.
    pub t_switch_mean: f64,
    pub spread_initial: f64,
    pub spread_final: f64,
    pub spread_ratio: f64,
    pub expected_ratio: f64,
    pub final_mean: f64,
    pub final_var: f64,
    pub final_err_mean: f64,
    pub final_err_var: f64,
    pub mc_samples: usize,
    pub mc_final_mean: Option<f64>,
    pub mc_final_var: Option<f64>,
}

/// Three sample paths from `μ0` and `μ0 ± 3σ0`, the moment dynamics, and an
/// optional Monte-Carlo cloud.
pub fn crossing1d(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Table, Artifacts, CrossingReport)> {
    let s = setup(cfg)?;
    let h = cfg.horizon / cfg.steps as f64;
    let opts = sample_options(cfg);
    let starts = [s.mu0 - 3.0 * s.sigma0, s.mu0, s.mu0 + 3.0 * s.sigma0];
    let paths = starts
        .iter()
        .map(|&x0| {
            integrate_sample(
                &s.sys.to_affine(),
                &DVector::from_element(1, x0),
                &ControlSchedule::none(),
                cfg.horizon,
                h,
                &opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Table::new(["t", "x_low", "x_mean", "x_high"]);
    for k in 0..paths[0].times.len() {
        samples.push(vec![
            paths[0].times[k],
            paths[0].states[k][0],
            paths[1].states[k][0],
            paths[2].states[k][0],
        ]);
    }
    let spread = |k: usize| paths[2].states[k][0] - paths[0].states[k][0];
    let last = paths[0].times.len() - 1;
    let t_switch_mean = paths[1]
        .events
        .first()
        .map(|e| e.t_s)
        .ok_or_else(|| Error::Domain("the mean trajectory never switches".into()))?;

    let tr = scalar_belief_trajectory(&s.sys, s.mu0, s.sigma0, cfg.horizon, cfg.steps)?;
    let (trace, _) = error_trace(&s, &tr)?;
    let fin = tr.last();
    let (rm, rv) = crossing_reference_1d(&s.sys, s.mu0, s.sigma0, cfg.horizon)?;

    let (mc_final_mean, mc_final_var) = if cfg.samples >= 2 {
        let cloud = draw_samples(&GaussianBelief::scalar(s.mu0, s.sigma0 * s.sigma0)?, cfg.samples, seed)?;
        let ct = propagate_cloud(
            &s.sys.to_affine(),
            &cloud,
            &ControlSchedule::none(),
            cfg.horizon,
            h,
            &opts,
        )?;
        let emp = empirical_moments(ct.clouds.last().expect("final knot"))?;
        (Some(emp.mean[0]), Some(emp.cov[(0, 0)]))
    } else {
        (None, None)
    };

    let report = CrossingReport {
        t_switch_mean,
        spread_initial: spread(0),
        spread_final: spread(last),
        spread_ratio: spread(last) / spread(0),
        expected_ratio: s.sys.f2bar / s.sys.f1bar,
        final_mean: fin.mean[0],
        final_var: fin.cov[(0, 0)],
        final_err_mean: fin.mean[0] - rm,
        final_err_var: fin.cov[(0, 0)] - rv,
        mc_samples: cfg.samples,
        mc_final_mean,
        mc_final_var,
    };
    Ok((trace, vec![("samples.csv".into(), Artifact::Csv(samples))], report))
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorWindowReport {
    /// Scale and initial mean of the post-switch virtual normal.
    pub sigma2: f64,
    pub mu2_at_0: f64,
    /// Knots with `|μ0 + f̄1 t| / σ0 < 6` form the crossing window.
    pub window_start: f64,
    pub window_end: f64,
    pub drift_before: f64,
    pub drift_after: f64,
    pub err_before: f64,
    pub err_after: f64,
    pub final_err_mean: f64,
    pub final_err_var: f64,
}

/// Mean error over time and its drift outside the crossing window.
pub fn crossing1d_error(cfg: &ExperimentConfig) -> Result<(Table, ErrorWindowReport)> {
    let s = setup(cfg)?;
    let r = s.sys.f2bar / s.sys.f1bar;
    let tr = scalar_belief_trajectory(&s.sys, s.mu0, s.sigma0, cfg.horizon, cfg.steps)?;
    let (trace, errs) = error_trace(&s, &tr)?;
    let z = |t: f64| (s.mu0 + s.sys.f1bar * t) / s.sigma0;
    let before: Vec<usize> = (0..tr.times.len()).filter(|&k| z(tr.times[k]) <= -CROSSING_Z).collect();
    let after: Vec<usize> = (0..tr.times.len()).filter(|&k| z(tr.times[k]) >= CROSSING_Z).collect();
    let (Some(&b_last), Some(&a_first)) = (before.last(), after.first()) else {
        return Err(Error::Domain(
            "the horizon does not contain both sides of the crossing window".into(),
        ));
    };
    let drift = |ks: &[usize], anchor: usize| {
        ks.iter()
            .map(|&k| (errs[k] - errs[anchor]).abs())
            .fold(0.0, f64::max)
    };
    let v_last = trace.rows.last().expect("knots");
    Ok((
        trace.clone(),
        ErrorWindowReport {
            sigma2: r * s.sigma0,
            mu2_at_0: r * s.mu0,
            window_start: tr.times[b_last],
            window_end: tr.times[a_first],
            drift_before: drift(&before, before[0]),
            drift_after: drift(&after, a_first),
            err_before: errs[b_last],
            err_after: errs[a_first],
            final_err_mean: v_last[5],
            final_err_var: v_last[6],
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub points: usize,
    /// One slope for the sigma sweep; `[f̄1 > f̄2, f̄1 < f̄2]` for the jump sweep.
    pub slopes: Vec<f64>,
    pub errors: Vec<Vec<f64>>,
}

/// Final mean error against `σ0`, with steps fine enough to resolve the
/// crossing: `h ≤ σ_final / (20 max f̄)`.
pub fn error_sweep_sigma(cfg: &ExperimentConfig) -> Result<(Table, SweepReport)> {
    let s = setup(cfg)?;
    let values = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config(vec!["sweep values are required".into()]))?;
    let r = s.sys.f2bar / s.sys.f1bar;
    let fmax = s.sys.f1bar.abs().max(s.sys.f2bar.abs());
    let mut table = Table::new(["sigma0", "steps", "mu_final", "ref_mu_final", "err_mean", "err_var"]);
    let mut errors = Vec::with_capacity(values.len());
    for &sigma0 in &values {
        let needed = (cfg.horizon * 20.0 * fmax / (r.min(1.0) * sigma0)).ceil() as usize;
        let steps = cfg.steps.max(needed);
        let tr = scalar_belief_trajectory(&s.sys, s.mu0, sigma0, cfg.horizon, steps)?;
        let (rm, rv) = crossing_reference_1d(&s.sys, s.mu0, sigma0, cfg.horizon)?;
        let b = tr.last();
        let e = (b.mean[0] - rm).abs();
        errors.push(e);
        table.push(vec![sigma0, steps as f64, b.mean[0], rm, e, b.cov[(0, 0)] - rv]);
    }
    let slope = loglog_slope(&values, &errors)?;
    Ok((
        table,
        SweepReport {
            points: values.len(),
            slopes: vec![slope],
            errors: vec![errors],
        },
    ))
}

/// Final mean error of the moment dynamics for `f̄1 = f̄2 + sign·δ`.
///
/// Offsets down to 1e-12 are below the resolution of `f̄1` itself, so the
/// ODE is integrated for the deviation from the pure mode-2 drift:
/// `μ = μ0 + f̄2 t + d`, `v = σ0² + w`, with `ḋ = sign·δ Φ(z)` and
/// `ẇ = -2 sign·δ φ(z) √v`, `z = -μ/√v`. Once the crossing is complete the
/// exact mean is `r μ0 + f̄2 t`, so the exact deviation is `(r - 1) μ0 =
/// -sign·δ μ0 / (1 + sign·δ)`; the neglected unswitched mass is below
/// `Φ(-6)` when both end points are six standard deviations from 0.
pub fn jump_error(
    f2bar: f64,
    sign: f64,
    delta: f64,
    mu0: f64,
    sigma0: f64,
    t_final: f64,
    steps: usize,
) -> Result<f64> {
    if !(delta > 0.0) || !(sigma0 > 0.0) || steps == 0 {
        return Err(Error::Domain("offset, scale and steps must be positive".into()));
    }
    let sd = sign * delta;
    let rhs = |t: f64, d: f64, w: f64| {
        let v = sigma0 * sigma0 + w;
        let sv = v.sqrt();
        let z = -(mu0 + f2bar * t + d) / sv;
        (sd * big_phi(z), -2.0 * sd * phi(z) * sv)
    };
    let h = t_final / steps as f64;
    let (mut d, mut w) = (0.0, 0.0);
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = rhs(t, d, w);
        let k2 = rhs(t + 0.5 * h, d + 0.5 * h * k1.0, w + 0.5 * h * k1.1);
        let k3 = rhs(t + 0.5 * h, d + 0.5 * h * k2.0, w + 0.5 * h * k2.1);
        let k4 = rhs(t + h, d + h * k3.0, w + h * k3.1);
        d += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        w += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    let exact = -sd * mu0 / (1.0 + sd);
    Ok((d - exact).abs())
}

/// Final mean error against `|f̄1 - f̄2|`, for both signs of the offset.
pub fn error_sweep_jump(cfg: &ExperimentConfig) -> Result<(Table, SweepReport)> {
    let s = setup(cfg)?;
    let values = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config(vec!["sweep values are required".into()]))?;
    let mut table = Table::new(["sign", "delta", "f1bar", "err_mean"]);
    let mut slopes = Vec::new();
    let mut errors = Vec::new();
    for sign in [1.0, -1.0] {
        let mut errs = Vec::with_capacity(values.len());
        for &delta in &values {
            let e = jump_error(s.sys.f2bar, sign, delta, s.mu0, s.sigma0, cfg.horizon, cfg.steps)?;
            errs.push(e);
            table.push(vec![sign, delta, s.sys.f2bar + sign * delta, e]);
        }
        slopes.push(loglog_slope(&values, &errs)?);
        errors.push(errs);
    }
    Ok((
        table,
        SweepReport {
            points: values.len(),
            slopes,
            errors,
        },
    ))
}
