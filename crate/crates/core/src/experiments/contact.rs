//! Spring/dashpot contact model: moment dynamics against a sample cloud.

use nalgebra::DVector;
use serde::Serialize;

use super::{belief_columns, belief_values, Table};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::integrate::{integrate_sample, rk4_joint, ControlSchedule, SampleOptions};
use crate::moments::rhs_pwa_with;
use crate::moments::{DegeneratePolicy, MomentOptions};
use crate::montecarlo::{
    draw_samples, empirical_moments, moment_error, projected_skewness, propagate_cloud,
    standard_errors, SampleCloud,
};
use crate::systems::{BuiltinModel, GaussianBelief, PiecewiseSmoothModel};

/// Fraction of samples in each mode below which a knot counts as unmixed.
pub const MIXED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct ContactReport {
    pub samples: usize,
    /// Earliest switching time over all samples.
    pub first_switch_time: f64,
    /// Largest `|Δμ_i| / se_i` and `|ΔΣ_ij| / se_ij` before the first switch.
    pub max_mean_se_ratio_before_switch: f64,
    pub max_cov_se_ratio_before_switch: f64,
    /// Switching times of the path started at the initial mean.
    pub nominal_switch_times: Vec<f64>,
    pub max_mean_err: f64,
    pub max_cov_err: f64,
    /// Largest `|skewness|` of the ψ-projected cloud while both modes hold
    /// samples, over the first such window.
    pub max_abs_skew_during_crossing: f64,
    pub crossing_window: (f64, f64),
    /// `|skewness|` at the first knot after that window with every sample
    /// back in one mode, and the smallest value before the next window.
    pub abs_skew_after_crossing: Option<f64>,
    pub min_abs_skew_after_crossing: Option<f64>,
    pub after_crossing_time: Option<f64>,
}

fn fraction_mode2<M: PiecewiseSmoothModel + ?Sized>(model: &M, c: &SampleCloud) -> f64 {
    (0..c.len()).filter(|&i| model.psi(&c.row(i)) > 0.0).count() as f64 / c.len() as f64
}

pub fn spring_dashpot(cfg: &ExperimentConfig, seed: u64) -> Result<(Table, ContactReport)> {
    let bm = BuiltinModel::from_params(&cfg.model, &cfg.params)?;
    let sys = bm
        .affine()
        .ok_or_else(|| Error::Config(vec![format!("model `{}` is not affine", cfg.model)]))?
        .clone();
    if cfg.samples < 2 {
        return Err(Error::Config(vec!["spring-dashpot needs at least 2 samples".into()]));
    }
    let h = cfg.horizon / cfg.steps as f64;
    let opts = SampleOptions {
        switch_tol: cfg.tolerances.switch_tol,
        max_events: cfg.tolerances.max_events,
    };
    let mopts = MomentOptions {
        var_floor: cfg.tolerances.var_floor,
        degenerate: DegeneratePolicy::default(),
    };
    let none = ControlSchedule::none();
    let tr = rk4_joint(
        |b: &GaussianBelief, _u: &DVector<f64>| rhs_pwa_with(&sys, b, &mopts),
        &bm.initial,
        &none,
        cfg.horizon,
        cfg.steps,
    )?;
    let cloud = draw_samples(&bm.initial, cfg.samples, seed)?;
    let ct = propagate_cloud(&sys, &cloud, &none, cfg.horizon, h, &opts)?;
    let nominal = integrate_sample(&sys, &bm.initial.mean, &none, cfg.horizon, h, &opts)?;
    let first_switch = ct.first_event_time().unwrap_or(f64::INFINITY);

    let n = sys.dim();
    let mut header = vec!["t".to_string()];
    header.extend(belief_columns("", n));
    header.extend(belief_columns("ref_", n));
    header.extend(
        ["err_mean", "err_cov", "se_mean", "se_cov", "skew_proj", "frac_mode2"].map(String::from),
    );
    let mut table = Table::new(header);

    let (mut ratio_mu, mut ratio_cov) = (0.0f64, 0.0f64);
    let (mut max_mean_err, mut max_cov_err) = (0.0f64, 0.0f64);
    let mut skews = Vec::with_capacity(ct.times.len());
    let mut fracs = Vec::with_capacity(ct.times.len());
    for (k, t) in ct.times.iter().enumerate() {
        let c = &ct.clouds[k];
        let emp = empirical_moments(c)?;
        let se = standard_errors(c)?;
        let b = &tr.beliefs[k];
        let me = moment_error(b, &emp)?;
        if *t < first_switch {
            for i in 0..n {
                ratio_mu = ratio_mu.max((b.mean[i] - emp.mean[i]).abs() / se.mean_se[i]);
                for j in 0..n {
                    ratio_cov =
                        ratio_cov.max((b.cov[(i, j)] - emp.cov[(i, j)]).abs() / se.cov_se[(i, j)]);
                }
            }
        }
        max_mean_err = max_mean_err.max(me.mean_err);
        max_cov_err = max_cov_err.max(me.cov_err);
        let skew = projected_skewness(c, &sys.g)?;
        let frac = fraction_mode2(&sys, c);
        skews.push(skew);
        fracs.push(frac);
        let mut row = vec![*t];
        row.extend(belief_values(b));
        row.extend(belief_values(&emp));
        row.extend([me.mean_err, me.cov_err, se.mean_norm(), se.cov_norm(), skew, frac]);
        table.push(row);
    }

    let mixed = |k: usize| fracs[k] >= MIXED_FRACTION && fracs[k] <= 1.0 - MIXED_FRACTION;
    let start = (0..fracs.len())
        .find(|&k| mixed(k))
        .ok_or_else(|| Error::Domain("the cloud never straddles the surface".into()))?;
    let end = (start..fracs.len()).find(|&k| !mixed(k)).unwrap_or(fracs.len());
    let max_abs_skew_during_crossing = skews[start..end].iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let settled = (end..fracs.len()).find(|&k| fracs[k] == 0.0 || fracs[k] == 1.0);
    let (abs_after, min_after, after_time) = match settled {
        Some(a) => {
            let next = (a..fracs.len()).find(|&k| mixed(k)).unwrap_or(fracs.len());
            let min = skews[a..next].iter().fold(f64::INFINITY, |m, s| m.min(s.abs()));
            (Some(skews[a].abs()), Some(min), Some(ct.times[a]))
        }
        None => (None, None, None),
    };

    Ok((
        table,
        ContactReport {
            samples: cfg.samples,
            first_switch_time: first_switch,
            max_mean_se_ratio_before_switch: ratio_mu,
            max_cov_se_ratio_before_switch: ratio_cov,
            nominal_switch_times: nominal.events.iter().map(|e| e.t_s).collect(),
            max_mean_err,
            max_cov_err,
            max_abs_skew_during_crossing,
            crossing_window: (ct.times[start], ct.times[end.min(ct.times.len() - 1)]),
            abs_skew_after_crossing: abs_after,
            min_abs_skew_after_crossing: min_after,
            after_crossing_time: after_time,
        },
    ))
}
