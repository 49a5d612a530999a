use nalgebra::{DMatrix, DVector};

use super::plant::PlantParams;
use crate::error::{Error, Result};

/// Fraction of the peak |acceleration| below which a sample counts as
/// constant velocity.
const STEADY_ACCEL_FRACTION: f64 = 0.05;
/// Fraction of the peak |velocity| below which the axis counts as standing.
const MOVING_FRACTION: f64 = 0.2;
/// Singular-value ratio treated as rank deficiency.
const RANK_TOL: f64 = 1e-10;
/// Rows kept for the period search.
const SEARCH_ROWS: usize = 4000;

/// Least-squares fit of mass, damping and the ripple/cogging series from a
/// recorded open-loop or closed-loop trace.
///
/// `force` is the motor force acting on the mass at each sample [N],
/// `velocity` in mm/s and `position` in mm. The model is read in discrete
/// form `m (v[k+1] - v[k]) / Ts = F[k] - b v[k] - ripple(p[k])`.
///
/// Stage one regresses the force on the ripple basis over the
/// constant-velocity samples, with acceleration and velocity as nuisance
/// columns; the ripple period is found by a one-dimensional residual search
/// on top of that linear problem. Stage two fits `(m, b)` on the whole trace
/// against the ripple-corrected force.
pub fn identify_plant(
    force: &[f64],
    velocity: &[f64],
    position: &[f64],
    sample_time: f64,
    n_harmonics: usize,
) -> Result<PlantParams> {
    let n = force.len();
    if velocity.len() != n || position.len() != n {
        return Err(Error::config("E_TRACE", "identification traces differ in length"));
    }
    if n < 8 || n_harmonics < 1 || !(sample_time > 0.0) {
        return Err(Error::InsufficientExcitation(format!(
            "need at least 8 samples and one harmonic, got {n} samples"
        )));
    }

    // SI samples; the last sample has no forward difference.
    let m_rows = n - 1;
    let v: Vec<f64> = velocity[..m_rows].iter().map(|x| x * 1e-3).collect();
    let p: Vec<f64> = position[..m_rows].iter().map(|x| x * 1e-3).collect();
    let a: Vec<f64> = (0..m_rows)
        .map(|k| (velocity[k + 1] - velocity[k]) * 1e-3 / sample_time)
        .collect();
    let u = &force[..m_rows];

    let a_max = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let v_max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let steady: Vec<usize> = (0..m_rows)
        .filter(|&k| a[k].abs() <= STEADY_ACCEL_FRACTION * a_max && v[k].abs() >= MOVING_FRACTION * v_max)
        .collect();
    // Travel covered at constant velocity.
    let travel: f64 = steady.iter().map(|&k| v[k].abs() * sample_time).sum();
    if steady.len() < 2 * n_harmonics + 5 || !(travel > 0.0) {
        return Err(Error::InsufficientExcitation(
            "no usable constant-velocity segment".into(),
        ));
    }

    let p_lo = steady.iter().map(|&k| p[k]).fold(f64::INFINITY, f64::min);
    let p_hi = steady.iter().map(|&k| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let span = p_hi - p_lo;
    if !(span > 0.0) {
        return Err(Error::InsufficientExcitation("position does not vary".into()));
    }

    let stage1 = |period: f64| ripple_fit(&steady, u, &a, &v, &p, period, n_harmonics);
    // The period search runs on a thinned row set; the final fit uses all rows.
    let stride = (steady.len() / SEARCH_ROWS).max(1);
    let thinned: Vec<usize> = steady.iter().step_by(stride).copied().collect();
    let search = |period: f64| {
        ripple_fit(&thinned, u, &a, &v, &p, period, n_harmonics)
            .map(|f| f.sse)
            .unwrap_or(f64::INFINITY)
    };

    // Coarse log-spaced period search, then golden-section refinement of the
    // best bracket.
    let hi = 2.0 * span;
    let lo = hi / 400.0;
    let n_grid = 400;
    let periods: Vec<f64> = (0..n_grid)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n_grid - 1) as f64))
        .collect();
    let sse: Vec<f64> = periods
        .iter()
        .map(|&c3| search(c3))
        .collect();
    let best = (0..n_grid)
        .min_by(|&i, &j| sse[i].total_cmp(&sse[j]))
        .unwrap();
    if !sse[best].is_finite() {
        return Err(Error::InsufficientExcitation(
            "ripple regression is rank deficient".into(),
        ));
    }
    let left = periods[best.saturating_sub(1)];
    let right = periods[(best + 1).min(n_grid - 1)];
    let period = golden_min(search, left, right, 100);
    if travel < 2.0 * period {
        return Err(Error::InsufficientExcitation(format!(
            "constant-velocity travel {:.4} m is shorter than two ripple periods ({:.4} m)",
            travel,
            2.0 * period
        )));
    }
    let fit = stage1(period)?;

    let mut coeffs = vec![fit.beta[0], fit.beta[1], period];
    for h in 0..n_harmonics {
        let s = fit.beta[2 + 2 * h];
        let c = fit.beta[3 + 2 * h];
        coeffs.push(s.hypot(c));
        coeffs.push(c.atan2(s));
    }

    // Stage two: (m, b) from the ripple-corrected force on every sample.
    let mut x2 = DMatrix::zeros(m_rows, 2);
    let mut y2 = DVector::zeros(m_rows);
    for k in 0..m_rows {
        x2[(k, 0)] = a[k];
        x2[(k, 1)] = v[k];
        y2[k] = u[k] - ripple_basis_eval(&fit.beta, p[k], period, n_harmonics);
    }
    let mb = lstsq(&x2, &y2)?;

    let mut params = PlantParams::table1();
    params.mass = mb[0];
    params.damping = mb[1];
    params.ripple_coeffs = coeffs;
    params.n_harmonics = n_harmonics;
    Ok(params)
}

struct RippleFit {
    /// c1, c2, then (sin, cos) weights per harmonic.
    beta: Vec<f64>,
    sse: f64,
}

fn ripple_fit(
    rows: &[usize],
    u: &[f64],
    a: &[f64],
    v: &[f64],
    p: &[f64],
    period: f64,
    n_harmonics: usize,
) -> Result<RippleFit> {
    let cols = 2 * n_harmonics + 4;
    let mut x = DMatrix::zeros(rows.len(), cols);
    let mut y = DVector::zeros(rows.len());
    for (r, &k) in rows.iter().enumerate() {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = p[k];
        let w = 2.0 * std::f64::consts::PI * p[k] / period;
        for h in 0..n_harmonics {
            let arg = (h + 1) as f64 * w;
            x[(r, 2 + 2 * h)] = arg.sin();
            x[(r, 3 + 2 * h)] = arg.cos();
        }
        x[(r, cols - 2)] = a[k];
        x[(r, cols - 1)] = v[k];
        y[r] = u[k];
    }
    let beta = lstsq(&x, &y)?;
    let resid = &y - &x * &beta;
    Ok(RippleFit {
        beta: beta.iter().take(cols - 2).copied().collect(),
        sse: resid.norm_squared(),
    })
}

fn ripple_basis_eval(beta: &[f64], p: f64, period: f64, n_harmonics: usize) -> f64 {
    let w = 2.0 * std::f64::consts::PI * p / period;
    let mut f = beta[0] + beta[1] * p;
    for h in 0..n_harmonics {
        let arg = (h + 1) as f64 * w;
        f += beta[2 + 2 * h] * arg.sin() + beta[3 + 2 * h] * arg.cos();
    }
    f
}

/// Column-scaled SVD least squares; rank deficiency is reported as missing
/// excitation.
fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let scale: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let n = x.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return Err(Error::InsufficientExcitation(
            "regression matrix is rank deficient".into(),
        ));
    }
    let beta = svd
        .solve(y, 0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(DVector::from_iterator(
        beta.len(),
        beta.iter().zip(&scale).map(|(b, s)| b / s),
    ))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo <= 1e-14 * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}
