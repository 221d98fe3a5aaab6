//! Sample-based reference moments.
//!
//! Clouds are drawn with ChaCha20 and Box–Muller (`libm` transcendental
//! functions), so a seed reproduces the same bits on every platform. Each
//! sample is propagated with the event-detecting integrator; rows are
//! processed in parallel but results keep their row order.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussmath::{big_phi, trunc_affine_lower, trunc_affine_upper};
use crate::integrate::{integrate_sample, ControlSchedule, SampleOptions, SwitchEvent};
use crate::quad;
use crate::systems::{symmetrized, GaussianBelief, PiecewiseConstant1D, PiecewiseSmoothModel};

/// Minimum eigenvalue accepted by [`draw_samples`].
pub const PSD_SAMPLING_TOL: f64 = 1e-8;

/// `n_samples × n` matrix of states at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub samples: DMatrix<f64>,
    pub seed: u64,
    pub t: f64,
}

impl SampleCloud {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    /// Writes one row per sample, columns `x0, x1, ...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in self.samples.row_iter() {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Norms of the moment differences: Euclidean for the mean, Frobenius for
/// the covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentError {
    pub mean_err: f64,
    pub cov_err: f64,
}

/// Lower factor `L` (`n × rank`) with `LLᵀ = Σ`, by Cholesky with diagonal
/// pivoting; stops once the largest remaining pivot is negligible.
pub fn pivoted_cholesky(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let mut r = symmetrized(cov);
    let scale = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let cutoff = scale * 1e-14;
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let (j, pivot) = (0..n)
            .map(|i| (i, r[(i, i)]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if !(pivot > cutoff) {
            break;
        }
        let col = r.column(j) / pivot.sqrt();
        r -= &col * col.transpose();
        cols.push(col);
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Fills `out` with standard normals, two per Box–Muller pair.
fn fill_standard_normal(rng: &mut ChaCha20Rng, out: &mut [f64]) {
    let mut chunks = out.chunks_mut(2);
    for pair in &mut chunks {
        // 1 - U lies in (0, 1], so the logarithm is finite.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let a = std::f64::consts::TAU * u2;
        pair[0] = r * libm::cos(a);
        if pair.len() > 1 {
            pair[1] = r * libm::sin(a);
        }
    }
}

/// `n` draws from `belief`, reproducible from `seed`.
pub fn draw_samples(belief: &GaussianBelief, n: usize, seed: u64) -> Result<SampleCloud> {
    if n < 2 {
        return Err(Error::Domain(format!("a cloud needs at least 2 samples, got {n}")));
    }
    let d = belief.dim();
    let min_eig = belief.min_eigenvalue();
    if min_eig < -PSD_SAMPLING_TOL {
        return Err(Error::NotPsd { min_eig });
    }
    let l = pivoted_cholesky(&belief.cov);
    let k = l.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n * k];
    fill_standard_normal(&mut rng, &mut z);
    let mut samples = DMatrix::zeros(n, d);
    for i in 0..n {
        let zi = DVector::from_column_slice(&z[i * k..(i + 1) * k]);
        let x = &belief.mean + &l * zi;
        samples.set_row(i, &x.transpose());
    }
    Ok(SampleCloud { samples, seed, t: 0.0 })
}

/// Clouds on the integration grid plus the switch events of every row.
#[derive(Debug, Clone)]
pub struct CloudTrajectory {
    pub times: Vec<f64>,
    pub clouds: Vec<SampleCloud>,
    pub events: Vec<Vec<SwitchEvent>>,
}

impl CloudTrajectory {
    /// Time of the earliest event over all rows.
    pub fn first_event_time(&self) -> Option<f64> {
        self.events
            .iter()
            .filter_map(|e| e.first().map(|ev| ev.t_s))
            .min_by(f64::total_cmp)
    }
}

/// Propagates every row of `cloud` with [`integrate_sample`] on the grid
/// `0, h, ..., t_final`. The first failing row (by index) is reported.
pub fn propagate_cloud<M: PiecewiseSmoothModel + ?Sized>(
    model: &M,
    cloud: &SampleCloud,
    schedule: &ControlSchedule,
    t_final: f64,
    h: f64,
    opts: &SampleOptions,
) -> Result<CloudTrajectory> {
    let results: Vec<Result<_>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| integrate_sample(model, &cloud.row(i), schedule, t_final, h, opts))
        .collect();
    let mut paths = Vec::with_capacity(results.len());
    for (row, r) in results.into_iter().enumerate() {
        paths.push(r.map_err(|e| Error::Row {
            row,
            source: Box::new(e),
        })?);
    }
    let times = paths
        .first()
        .map(|p| p.times.clone())
        .unwrap_or_default();
    let d = cloud.dim();
    let clouds = (0..times.len())
        .map(|k| SampleCloud {
            samples: DMatrix::from_fn(paths.len(), d, |i, j| paths[i].states[k][j]),
            seed: cloud.seed,
            t: times[k],
        })
        .collect();
    let events = paths.into_iter().map(|p| p.events).collect();
    Ok(CloudTrajectory {
        times,
        clouds,
        events,
    })
}

/// Sample mean and unbiased, symmetrized sample covariance.
pub fn empirical_moments(cloud: &SampleCloud) -> Result<GaussianBelief> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::Domain("empirical covariance needs at least 2 samples".into()));
    }
    let mean = cloud.samples.row_mean().transpose();
    let centered = DMatrix::from_fn(n, cloud.dim(), |i, j| cloud.samples[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    GaussianBelief::new_unchecked(mean, symmetrized(&cov))
}

/// Standard errors of the empirical moments, estimated from the cloud:
/// `√(Σ̌_ii / n)` for the mean and `√((m4_ij - Σ̌_ij²) / n)` for covariance
/// entries, with `m4_ij` the mean of `(x_i - x̄_i)²(x_j - x̄_j)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub mean_se: DVector<f64>,
    pub cov_se: DMatrix<f64>,
}

impl Envelope {
    pub fn mean_norm(&self) -> f64 {
        self.mean_se.norm()
    }

    pub fn cov_norm(&self) -> f64 {
        self.cov_se.norm()
    }
}

pub fn standard_errors(cloud: &SampleCloud) -> Result<Envelope> {
    let moments = empirical_moments(cloud)?;
    let (n, d) = (cloud.len(), cloud.dim());
    let nf = n as f64;
    let mean_se = moments.cov.diagonal().map(|v| (v.max(0.0) / nf).sqrt());
    let centered = DMatrix::from_fn(n, d, |i, j| cloud.samples[(i, j)] - moments.mean[j]);
    let sq = centered.map(|v| v * v);
    let m4 = sq.transpose() * &sq / nf;
    let cov_se = DMatrix::from_fn(d, d, |i, j| {
        ((m4[(i, j)] - moments.cov[(i, j)].powi(2)).max(0.0) / nf).sqrt()
    });
    Ok(Envelope { mean_se, cov_se })
}

pub fn moment_error(approx: &GaussianBelief, reference: &GaussianBelief) -> Result<MomentError> {
    if approx.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(format!(
            "comparing beliefs of dimension {} and {}",
            approx.dim(),
            reference.dim()
        )));
    }
    Ok(MomentError {
        mean_err: (&approx.mean - &reference.mean).norm(),
        cov_err: (&approx.cov - &reference.cov).norm(),
    })
}

/// Standardized third central moment of the cloud projected onto `g`.
pub fn projected_skewness(cloud: &SampleCloud, g: &DVector<f64>) -> Result<f64> {
    if g.len() != cloud.dim() {
        return Err(Error::DimensionMismatch("projection direction".into()));
    }
    let y = &cloud.samples * g;
    let n = y.len() as f64;
    let m = y.sum() / n;
    let (m2, m3) = y.iter().fold((0.0, 0.0), |(a, b), &v| {
        let d = v - m;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 <= 0.0 {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}

/// Mean and variance of the density equal to `N(mu1, s1²)` below 0 and
/// `N(mu2, s2²)` above 0, normalized by its total mass.
pub fn exact_reference_1d(mu1: f64, mu2: f64, s1: f64, s2: f64) -> Result<(f64, f64)> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::Domain(format!("scales must be positive, got {s1}, {s2}")));
    }
    let mass = big_phi(-mu1 / s1) + big_phi(mu2 / s2);
    if !(mass > 0.0) {
        return Err(Error::Domain("switched normal has no mass".into()));
    }
    let mean = (trunc_affine_lower(1.0, 0.0, 0.0, mu1, s1)?
        + trunc_affine_upper(1.0, 0.0, 0.0, mu2, s2)?)
        / mass;
    let pdf = |x: f64, mu: f64, s: f64| {
        let z = (x - mu) / s;
        (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let central = |x: f64, mu: f64, s: f64| (x - mean) * (x - mean) * pdf(x, mu, s);
    let lo = mu1 - 40.0 * s1;
    let below = if lo < 0.0 {
        quad::integrate(|x| central(x, mu1, s1), lo, 0.0f64.min(mu1 + 40.0 * s1), 1e-12, 0.0)
    } else {
        0.0
    };
    let hi = mu2 + 40.0 * s2;
    let above = if hi > 0.0 {
        quad::integrate(|x| central(x, mu2, s2), 0.0f64.max(mu2 - 40.0 * s2), hi, 1e-12, 0.0)
    } else {
        0.0
    };
    Ok((mean, (below + above) / mass))
}

/// Exact moments at time `t` for scalar piecewise constant dynamics with
/// `f̄1, f̄2 > 0` and an initial belief far inside mode 1: mode-1 samples are
/// `N(μ0 + f̄1 t, σ0²)`, samples that crossed are `N(r μ0 + f̄2 t, (r σ0)²)`
/// with `r = f̄2 / f̄1`.
pub fn crossing_reference_1d(
    model: &PiecewiseConstant1D,
    mu0: f64,
    sigma0: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if !(model.f1bar > 0.0 && model.f2bar > 0.0) {
        return Err(Error::Domain(
            "the crossing reference needs both mode velocities positive".into(),
        ));
    }
    let r = model.f2bar / model.f1bar;
    exact_reference_1d(mu0 + model.f1bar * t, r * mu0 + model.f2bar * t, sigma0, r * sigma0)
}
