//! Box-constrained quasi-Newton minimization.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Projection onto `[lo, hi]`.
pub fn project(z: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| z[i].clamp(lo[i], hi[i]))
}

/// `‖P(z - g) - z‖∞`, zero exactly at first-order stationary points.
pub fn stationarity(z: &DVector<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    (project(&(z - g), lo, hi) - z).amax()
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub z: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub stationarity: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;

/// Projected BFGS on the inverse Hessian.
///
/// Variables at a bound whose gradient pushes outward form the active set and
/// are held fixed; the quasi-Newton direction is computed on the free block.
/// The step is accepted by Armijo backtracking along the projected path
/// `P(z + α d)`. The approximation is reset to a scaled identity whenever the
/// direction fails to descend or the line search stalls.
pub fn projected_bfgs<F, G>(
    value: F,
    grad: G,
    z0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerResult>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = z0.len();
    let mut z = project(z0, lo, hi);
    let mut f = value(&z)?;
    let mut g = grad(&z)?;
    let mut hinv: Option<DMatrix<f64>> = None;
    let mut iterations = 0;

    let at_bound_eps = |i: usize| 1e-12 * (1.0 + (hi[i] - lo[i]).abs().min(1e12));

    while iterations < max_iter {
        let stat = stationarity(&z, &g, lo, hi);
        if stat <= tol {
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let eps = at_bound_eps(i);
                !((z[i] <= lo[i] + eps && g[i] > 0.0) || (z[i] >= hi[i] - eps && g[i] < 0.0))
            })
            .collect();

        let steepest = || {
            let scale = 1.0 / g.amax().max(1.0);
            DVector::from_fn(n, |i, _| if free[i] { -g[i] * scale } else { 0.0 })
        };
        let mut d = match &hinv {
            Some(h) => {
                let mut d = DVector::zeros(n);
                for i in (0..n).filter(|&i| free[i]) {
                    d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
                }
                d
            }
            None => steepest(),
        };
        if !(g.dot(&d) < 0.0) {
            hinv = None;
            d = steepest();
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut alpha = 1.0;
            for _ in 0..MAX_BACKTRACK {
                let trial = project(&(&z + &d * alpha), lo, hi);
                let step = &trial - &z;
                if step.amax() == 0.0 {
                    break;
                }
                // Evaluation failures at trial points count as rejections.
                if let Ok(ft) = value(&trial) {
                    if ft.is_finite() && ft <= f + ARMIJO_C * g.dot(&step) {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || hinv.is_none() {
                break;
            }
            hinv = None;
            d = steepest();
        }
        let Some((z_new, f_new)) = accepted else {
            break;
        };
        let g_new = grad(&z_new)?;
        let s = &z_new - &z;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let h = hinv.get_or_insert_with(|| DMatrix::identity(n, n) * (sy / y.dot(&y)));
            let rho = 1.0 / sy;
            let hy = &*h * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H - ρ(s yᵀH + H y sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            *h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            *h += &s * s.transpose() * (rho * rho * yhy + rho);
        }
        z = z_new;
        f = f_new;
        g = g_new;
    }
    let stat = stationarity(&z, &g, lo, hi);
    Ok(InnerResult {
        z,
        value: f,
        grad: g,
        stationarity: stat,
        iterations,
    })
}
