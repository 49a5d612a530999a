//! Expected improvement, constrained expected improvement and the two
//! acquisition maximizers (exhaustive grid, particle swarm).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::gp::GpModel;

/// Standard deviation (and variance) below which the posterior is treated as
/// exact.
pub const DEGENERATE_STD: f64 = 1e-12;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Expected improvement for minimization: `(ξ Φ(ξ) + φ(ξ)) σ` with
/// `ξ = (best - mean) / σ`.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if !(std >= DEGENERATE_STD) {
        return 0.0;
    }
    let n = std_normal();
    let xi = (best - mean) / std;
    ((xi * n.cdf(xi) + n.pdf(xi)) * std).max(0.0)
}

/// Probability that the constraint posterior lies below `threshold`.
pub fn feasibility_probability(mean: f64, var: f64, threshold: f64) -> f64 {
    if var < DEGENERATE_STD {
        return if mean <= threshold { 1.0 } else { 0.0 };
    }
    std_normal().cdf((threshold - mean) / var.sqrt())
}

/// Best cost among observations with `z <= threshold`; the overall best when
/// none is feasible.
pub fn feasible_best(costs: &[f64], constraints: &[f64], threshold: f64) -> f64 {
    let feasible = costs
        .iter()
        .zip(constraints)
        .filter(|(_, z)| **z <= threshold)
        .map(|(y, _)| *y)
        .fold(f64::INFINITY, f64::min);
    if feasible.is_finite() {
        feasible
    } else {
        costs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Everything the constrained acquisition needs at one iteration.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionContext<'a> {
    pub cost_model: &'a GpModel,
    pub constraint_model: &'a GpModel,
    pub best_observed: f64,
    /// Constraint threshold `g_tr` [mm].
    pub threshold: f64,
    pub bounds: &'a Bounds,
}

impl AcquisitionContext<'_> {
    /// CEI at a unit-box point.
    pub fn cei_unit(&self, u: &[f64]) -> f64 {
        let (mf, vf) = self.cost_model.posterior(u);
        let ei = expected_improvement(mf, vf.sqrt(), self.best_observed);
        if ei == 0.0 {
            return 0.0;
        }
        let (mg, vg) = self.constraint_model.posterior(u);
        feasibility_probability(mg, vg, self.threshold) * ei
    }

    pub fn ei_unit(&self, u: &[f64]) -> f64 {
        let (mf, vf) = self.cost_model.posterior(u);
        expected_improvement(mf, vf.sqrt(), self.best_observed)
    }
}

/// CEI at a point in drive units.
pub fn constrained_ei(ctx: &AcquisitionContext, x: &[f64]) -> f64 {
    ctx.cei_unit(&ctx.bounds.to_unit(x))
}

/// Result of an acquisition maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argmax {
    /// Maximizer in the objective's own coordinates.
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Best value after initialization and after every swarm iteration.
    pub history: Vec<f64>,
}

/// Grid maximizer over the unit box: `resolution[d]` evenly spaced levels per
/// dimension including both faces. Ties go to the lowest lexicographic index,
/// whatever the number of worker threads.
pub fn grid_maximize<F>(f: F, resolution: &[usize]) -> Argmax
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(resolution.iter().all(|&r| r >= 2), "grid resolution must be at least 2");
    let total: usize = resolution.iter().product();
    let point = |mut idx: usize| -> Vec<f64> {
        let mut u = vec![0.0; resolution.len()];
        for d in (0..resolution.len()).rev() {
            let r = resolution[d];
            u[d] = (idx % r) as f64 / (r - 1) as f64;
            idx /= r;
        }
        u
    };
    let (value, idx) = (0..total)
        .into_par_iter()
        .map(|i| {
            let v = f(&point(i));
            (if v.is_nan() { f64::NEG_INFINITY } else { v }, i)
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    Argmax {
        x: point(idx.min(total - 1)),
        value,
        evaluations: total,
        history: vec![],
    }
}

/// Exhaustive CEI evaluation on a regular grid over the admissible box.
pub fn argmax_grid(ctx: &AcquisitionContext, resolution: &[usize]) -> Argmax {
    let mut a = grid_maximize(|u| ctx.cei_unit(u), resolution);
    a.x = ctx.bounds.from_unit(&a.x);
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity clip as a fraction of the box width.
    pub max_velocity: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles: 10,
            iterations: 50,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            max_velocity: 0.2,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::config("E_PSO", "a swarm needs at least two particles"));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(Error::config("E_PSO", "inertia must lie in (0, 1)"));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0 && self.max_velocity > 0.0) {
            return Err(Error::config("E_PSO", "swarm coefficients must be non-negative"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PsoConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Global-best particle swarm over the unit box of dimension `dims`.
///
/// Positions are clipped to the box and velocities to `max_velocity`; the
/// best-ever particle is returned. Objective calls within one swarm step run
/// in parallel; the result depends only on the seed.
pub fn pso_maximize<F>(f: F, dims: usize, cfg: &PsoConfig) -> Argmax
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pos: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();
    run_swarm(f, pos, &mut rng, cfg)
}

/// Swarm started from the given unit-box positions, one particle each;
/// `cfg.particles` is ignored.
pub fn pso_maximize_from<F>(f: F, start: Vec<Vec<f64>>, cfg: &PsoConfig) -> Argmax
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(!start.is_empty(), "a swarm needs at least one particle");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_swarm(f, start, &mut rng, cfg)
}

fn run_swarm<F>(f: F, mut pos: Vec<Vec<f64>>, rng: &mut ChaCha8Rng, cfg: &PsoConfig) -> Argmax
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = pos.len();
    let dims = pos[0].len();
    let vmax = cfg.max_velocity;
    let eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.par_iter()
            .map(|x| {
                let v = f(x);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect()
    };

    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(-vmax..=vmax)).collect())
        .collect();
    let mut val = eval(&pos);
    let mut pbest = pos.clone();
    let mut pbest_val = val.clone();
    let mut g = argmax_index(&val);
    let mut gbest = pos[g].clone();
    let mut gbest_val = val[g];
    let mut history = vec![gbest_val];

    for _ in 0..cfg.iterations {
        for i in 0..n {
            for d in 0..dims {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[i][d]
                    + cfg.cognitive * r1 * (pbest[i][d] - pos[i][d])
                    + cfg.social * r2 * (gbest[d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax, vmax);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(0.0, 1.0);
            }
        }
        val = eval(&pos);
        for i in 0..n {
            if val[i] > pbest_val[i] {
                pbest_val[i] = val[i];
                pbest[i] = pos[i].clone();
            }
        }
        g = argmax_index(&pbest_val);
        if pbest_val[g] > gbest_val {
            gbest_val = pbest_val[g];
            gbest = pbest[g].clone();
        }
        history.push(gbest_val);
    }
    Argmax {
        x: gbest,
        value: gbest_val,
        evaluations: n * (cfg.iterations + 1),
        history,
    }
}

fn argmax_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Swarm maximization of CEI over the admissible box.
pub fn argmax_pso(ctx: &AcquisitionContext, cfg: &PsoConfig) -> Argmax {
    let mut a = pso_maximize(|u| ctx.cei_unit(u), ctx.bounds.dims(), cfg);
    a.x = ctx.bounds.from_unit(&a.x);
    a
}

/// Writes the CEI surface over the first two gains as `kp,kv,cei`. A third
/// tuned dimension is held at `ti_slice`.
pub fn write_surface_csv<W: Write>(
    ctx: &AcquisitionContext,
    nx: usize,
    ny: usize,
    ti_slice: Option<f64>,
    mut w: W,
) -> Result<()> {
    writeln!(w, "kp,kv,cei")?;
    let b = ctx.bounds;
    for i in 0..nx {
        for j in 0..ny {
            let kp = b.lower[0] + b.width(0) * i as f64 / (nx.max(2) - 1) as f64;
            let kv = b.lower[1] + b.width(1) * j as f64 / (ny.max(2) - 1) as f64;
            let mut x = vec![kp, kv];
            if b.dims() == 3 {
                x.push(ti_slice.unwrap_or(0.5 * (b.lower[2] + b.upper[2])));
            }
            writeln!(w, "{kp},{kv},{}", constrained_ei(ctx, &x))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use approx::assert_relative_eq;

    #[test]
    fn ei_closed_forms() {
        assert_relative_eq!(expected_improvement(1.0, 1.0, 1.0), 0.398942, epsilon = 1e-6);
        assert_eq!(expected_improvement(-5.0, 0.0, 1.0), 0.0);
        let n = std_normal();
        let oracle = 3.0 * n.cdf(3.0) + n.pdf(3.0);
        assert_relative_eq!(expected_improvement(-2.0, 1.0, 1.0), oracle, epsilon = 1e-12);
        assert_relative_eq!(oracle, 3.000382, epsilon = 1e-6);
    }

    #[test]
    fn ei_increases_with_std_at_the_incumbent() {
        let mut prev = 0.0;
        for k in 1..50 {
            let e = expected_improvement(0.0, k as f64 * 0.1, 0.0);
            assert!(e > prev);
            prev = e;
        }
    }

    fn toy_models(peak: &[f64]) -> (GpModel, GpModel) {
        // cost data shaped as a bowl around `peak`, constraint flat and low
        let k = KernelParams {
            signal_variance: 1.0,
            length_scales: vec![0.3; peak.len()],
            noise_variance: 1e-6,
        };
        let pts = crate::design::latin_hypercube(20, peak.len(), 1);
        let ys: Vec<f64> = pts
            .iter()
            .map(|p| p.iter().zip(peak).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        let zs = vec![0.0; pts.len()];
        (
            GpModel::new(k.clone(), pts.clone(), ys).unwrap(),
            GpModel::new(k, pts, zs).unwrap(),
        )
    }

    #[test]
    fn cei_identities() {
        let (f, g) = toy_models(&[0.4, 0.6]);
        let b = Bounds::table2(2);
        let ctx = AcquisitionContext {
            cost_model: &f,
            constraint_model: &g,
            best_observed: 0.05,
            threshold: 1e3,
            bounds: &b,
        };
        let u = [0.45, 0.55];
        // threshold far above the constraint mean: certain feasibility
        assert!((ctx.cei_unit(&u) - ctx.ei_unit(&u)).abs() < 1e-9);
        let (mg, _) = g.posterior(&u);
        let half = AcquisitionContext {
            threshold: mg,
            ..ctx
        };
        assert_relative_eq!(half.cei_unit(&u), 0.5 * half.ei_unit(&u), epsilon = 1e-12);
        let never = AcquisitionContext {
            threshold: -1e3,
            ..ctx
        };
        assert!(never.cei_unit(&u) < 1e-12);
    }

    #[test]
    fn constant_surface_returns_first_point() {
        let a = grid_maximize(|_| 1.0, &[5, 4, 3]);
        assert_eq!(a.x, vec![0.0, 0.0, 0.0]);
        assert_eq!(a.evaluations, 60);
    }

    #[test]
    fn grid_reduction_is_thread_count_independent() {
        let f = |u: &[f64]| ((u[0] * 7.0).round() + (u[1] * 3.0).round()).min(6.0);
        let a = grid_maximize(f, &[40, 30]);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| grid_maximize(f, &[40, 30]));
        assert_eq!(a, b);
    }

    #[test]
    fn finer_grid_is_never_worse() {
        let (f, g) = toy_models(&[0.37, 0.71]);
        let b = Bounds::table2(2);
        let ctx = AcquisitionContext {
            cost_model: &f,
            constraint_model: &g,
            best_observed: 0.02,
            threshold: 1.0,
            bounds: &b,
        };
        // doubling the number of intervals keeps every coarse node
        let coarse = argmax_grid(&ctx, &[11, 11]);
        let fine = argmax_grid(&ctx, &[21, 21]);
        assert!(fine.value >= coarse.value);
    }

    #[test]
    fn pso_agrees_with_grid_on_a_single_peak() {
        let peak = [0.31, 0.62];
        let f = |u: &[f64]| (-((u[0] - peak[0]).powi(2) + (u[1] - peak[1]).powi(2)) / 0.02).exp();
        let g = grid_maximize(f, &[101, 101]);
        let p = pso_maximize(f, 2, &PsoConfig::default());
        for d in 0..2 {
            assert!((g.x[d] - p.x[d]).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn pso_locates_a_3d_peak_for_most_seeds() {
        let peak = [0.23, 0.71, 0.48];
        let f = |u: &[f64]| {
            let r2: f64 = u.iter().zip(&peak).map(|(a, b)| (a - b).powi(2)).sum();
            (-r2 / 0.05).exp()
        };
        let diag = 3f64.sqrt();
        let hits = (0..10)
            .filter(|&s| {
                let a = pso_maximize(f, 3, &PsoConfig::default().with_seed(s));
                let d: f64 = a.x.iter().zip(&peak).map(|(x, p)| (x - p).powi(2)).sum::<f64>().sqrt();
                d <= 0.01 * diag
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn pso_history_is_monotone_and_seeded() {
        let f = |u: &[f64]| (u[0] * 9.0).sin() * (u[1] * 4.0).cos();
        let a = pso_maximize(f, 2, &PsoConfig::default());
        assert!(a.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.value >= a.history[0]);
        assert_eq!(a, pso_maximize(f, 2, &PsoConfig::default()));
        assert!(a.x.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn feasible_best_falls_back_to_overall() {
        assert_eq!(feasible_best(&[3.0, 1.0, 2.0], &[0.1, 5.0, 0.2], 1.0), 2.0);
        assert_eq!(feasible_best(&[3.0, 1.0], &[5.0, 5.0], 1.0), 1.0);
    }
}
