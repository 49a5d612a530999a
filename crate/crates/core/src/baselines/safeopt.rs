//! Swarm-based safe Bayesian optimization.
//!
//! Every iteration runs three swarms over the unit box: one that traces the
//! region certified safe by the constraint GP, one that looks for candidate
//! minimizers (lowest cost lower bound) and one that looks for expanders (safe
//! points whose observation could certify currently uncertain points). The
//! next sample is the candidate with the wider cost confidence interval.

use std::sync::Mutex;

use log::{debug, info};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{pso_maximize_from, PsoConfig};
use crate::bounds::Bounds;
use crate::design::latin_hypercube;
use crate::error::{Error, Result};
use crate::gp::{fit, matern32_ard, Dataset, FitConfig, GpModel};
use crate::metrics::{evaluate_candidate, CostWeights, DivergenceCeiling, Observation};
use crate::sim::{GainVector, NoiseModel, PlantParams, ReferenceProfile};
use crate::tuner::{
    best_observation, count_violations, noise_free_cost, subseed, Hyperparameters, IterationRecord,
    StopReason, TuneReport,
};

/// Unsafe probes kept per iteration for the expander test.
const MAX_PROBES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HyperMode {
    /// Hyperparameters fitted on the safe seeds, then frozen.
    #[default]
    Tuned,
    /// Fitted, then the constraint kernel is made more cautious: length
    /// scales halved and signal variance doubled.
    FixedConservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeOptConfig {
    pub bounds: Bounds,
    pub beta: f64,
    /// Explicit seed set; when empty, `seed_count` Latin-hypercube points are
    /// drawn in `seed_region`.
    pub safe_seed_set: Vec<GainVector>,
    pub seed_region: Option<Bounds>,
    pub seed_count: usize,
    pub swarm: PsoConfig,
    pub iterations: usize,
    pub hyper_mode: HyperMode,
    pub weights: CostWeights,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for SafeOptConfig {
    fn default() -> Self {
        SafeOptConfig {
            bounds: Bounds::table2(2),
            beta: 2.0,
            safe_seed_set: Vec::new(),
            seed_region: Some(Bounds {
                lower: vec![20.0, 1.0],
                upper: vec![52.5, 6.0],
            }),
            seed_count: 15,
            swarm: PsoConfig::default(),
            iterations: 50,
            hyper_mode: HyperMode::Tuned,
            weights: CostWeights::default(),
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

impl SafeOptConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.weights.validate()?;
        self.swarm.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("E_SAFEOPT", "beta must be positive"));
        }
        if self.iterations < 1 {
            return Err(Error::config("E_SAFEOPT", "iterations must be at least 1"));
        }
        if self.safe_seed_set.is_empty() {
            match &self.seed_region {
                None => {
                    return Err(Error::config(
                        "E_SAFEOPT",
                        "the safe seed set is empty and no seed region is given",
                    ))
                }
                Some(r) => {
                    r.validate()?;
                    if r.dims() != self.bounds.dims() {
                        return Err(Error::config(
                            "E_SAFEOPT",
                            "seed region and bounds differ in dimension",
                        ));
                    }
                    if self.seed_count < 2 {
                        return Err(Error::config("E_SAFEOPT", "seed_count must be at least 2"));
                    }
                }
            }
        }
        Ok(())
    }

    /// The seed set actually used.
    pub fn seeds(&self) -> Vec<GainVector> {
        if !self.safe_seed_set.is_empty() {
            return self.safe_seed_set.clone();
        }
        let region = self.seed_region.as_ref().expect("validated seed region");
        latin_hypercube(self.seed_count, region.dims(), subseed(self.seed, 1))
            .iter()
            .map(|u| GainVector::from_slice(&region.from_unit(u)))
            .collect()
    }
}

struct Models<'a> {
    f: &'a GpModel,
    g: &'a GpModel,
    beta: f64,
    c_b: f64,
}

impl Models<'_> {
    fn g_ucb(&self, u: &[f64]) -> f64 {
        let (m, v) = self.g.posterior(u);
        m + self.beta * v.sqrt()
    }

    fn safe(&self, u: &[f64]) -> bool {
        self.g_ucb(u) <= self.c_b
    }

    fn f_lcb(&self, u: &[f64]) -> f64 {
        let (m, v) = self.f.posterior(u);
        m - self.beta * v.sqrt()
    }

    fn f_std(&self, u: &[f64]) -> f64 {
        self.f.posterior(u).1.sqrt()
    }
}

/// Probe point outside the certified set, with its cached posterior terms.
struct Probe {
    x: Vec<f64>,
    mean: f64,
    var: f64,
    white: DVector<f64>,
}

/// True when observing the constraint lower bound at `u` would certify at
/// least one probe as safe.
fn is_expander(m: &Models, probes: &[Probe], u: &[f64]) -> bool {
    let var = m.g.posterior(u).1;
    let sd = var.sqrt();
    let s = var + m.g.kernel.noise_variance;
    if s <= 0.0 {
        return false;
    }
    let shift = -m.beta * sd; // optimistic observation minus the mean
    let wu = m.g.whiten(u);
    probes.iter().any(|p| {
        let c = matern32_ard(&p.x, u, &m.g.kernel) - p.white.dot(&wu);
        let mean = p.mean + c / s * shift;
        let v = (p.var - c * c / s).max(0.0);
        mean + m.beta * v.sqrt() <= m.c_b
    })
}

/// Picks `n` swarm starters from `pool` (with repetition when it is small).
fn starters(pool: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    (0..n).map(|i| pool[idx[i % idx.len()]].clone()).collect()
}

/// Runs swarm-based SafeOpt against an arbitrary oracle.
///
/// The oracle contract matches [`crate::tuner::tune_with`]: `oracle(gains, k)`
/// evaluates experiment `k`, seeds first.
pub fn safeopt_tune_with<F>(cfg: &SafeOptConfig, mut oracle: F) -> Result<TuneReport>
where
    F: FnMut(&GainVector, usize) -> Result<Observation>,
{
    cfg.validate()?;
    let bounds = cfg.bounds.clone();
    let dims = bounds.dims();
    let c_b = cfg.weights.constraint_bound;

    // seeds must all be feasible
    let seeds = cfg.seeds();
    let mut raw = Vec::with_capacity(seeds.len());
    for (k, s) in seeds.iter().enumerate() {
        let o = oracle(s, k)?;
        if o.diverged || !(o.z <= c_b) {
            return Err(Error::UnsafeSeed {
                index: k,
                constraint: o.z,
                bound: c_b,
            });
        }
        raw.push(o);
    }
    let costs: Vec<f64> = raw.iter().map(|o| o.y).collect();
    let ceiling = DivergenceCeiling::from_initial(&costs, c_b);
    let mut data = Dataset::default();
    let mut unit_inputs = Vec::new();
    for o in raw {
        let mut x = o.x.to_vec(dims);
        bounds.clip(&mut x);
        unit_inputs.push(bounds.to_unit(&x));
        data.push(x, o.y, o.z);
    }
    let initial_design = data.clone();

    let cost_prior = fit(&unit_inputs, &data.cost_targets, &cfg.fit, subseed(cfg.seed, 2))?.model;
    let mut cons_prior = fit(&unit_inputs, &data.constraint_targets, &cfg.fit, subseed(cfg.seed, 3))?.model;
    if cfg.hyper_mode == HyperMode::FixedConservative {
        cons_prior = GpModel::with_offset(
            cons_prior.kernel.conservative(0.5, 2.0),
            cons_prior.inputs.clone(),
            cons_prior.targets.clone(),
            cons_prior.offset,
        )?;
    }
    debug!("safeopt constraint kernel {:?}", cons_prior.kernel);

    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for it in 1..=cfg.iterations {
        let f_model = cost_prior.condition(unit_inputs.clone(), data.cost_targets.clone())?;
        let g_model = cons_prior.condition(unit_inputs.clone(), data.constraint_targets.clone())?;
        let m = Models {
            f: &f_model,
            g: &g_model,
            beta: cfg.beta,
            c_b,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, 200 + it as u64));
        let swarm = |k: u64| cfg.swarm.with_seed(subseed(cfg.seed, 1000 * it as u64 + k));

        // observed feasible points start the first swarm
        let mut observed_safe: Vec<Vec<f64>> = unit_inputs
            .iter()
            .zip(&data.constraint_targets)
            .filter(|(u, z)| **z <= c_b && m.safe(u))
            .map(|(u, _)| u.clone())
            .collect();
        if observed_safe.is_empty() {
            observed_safe = unit_inputs
                .iter()
                .zip(&data.constraint_targets)
                .filter(|(_, z)| **z <= c_b)
                .map(|(u, _)| u.clone())
                .collect();
        }

        // (1) safe-set swarm; every evaluated position is kept
        let visited: Mutex<Vec<(Vec<f64>, f64)>> = Mutex::new(Vec::new());
        pso_maximize_from(
            |u| {
                let score = c_b - m.g_ucb(u);
                visited.lock().expect("visited lock").push((u.to_vec(), score));
                score
            },
            starters(&observed_safe, cfg.swarm.particles, &mut rng),
            &swarm(1),
        );
        let mut visited = visited.into_inner().expect("visited lock");
        visited.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.partial_cmp(&b.0).expect("finite")));
        let mut safe_set: Vec<Vec<f64>> = observed_safe.iter().filter(|u| m.safe(u)).cloned().collect();
        safe_set.extend(visited.iter().filter(|v| v.1 >= 0.0).map(|v| v.0.clone()));
        if safe_set.is_empty() {
            info!("no certified safe point at iteration {it}; stopping");
            stop_reason = StopReason::EmptySafeSet;
            break;
        }
        let probes: Vec<Probe> = visited
            .iter()
            .filter(|v| v.1 < 0.0)
            .take(MAX_PROBES)
            .map(|v| {
                let (mean, var) = g_model.posterior(&v.0);
                Probe {
                    x: v.0.clone(),
                    mean,
                    var,
                    white: g_model.whiten(&v.0),
                }
            })
            .collect();

        // (2) candidate minimizers
        let minimizer = pso_maximize_from(
            |u| if m.safe(u) { -m.f_lcb(u) } else { f64::NEG_INFINITY },
            starters(&safe_set, cfg.swarm.particles, &mut rng),
            &swarm(2),
        );
        // (3) expanders
        let expander = pso_maximize_from(
            |u| {
                if !m.safe(u) {
                    f64::NEG_INFINITY
                } else if is_expander(&m, &probes, u) {
                    m.g.posterior(u).1.sqrt()
                } else {
                    0.0
                }
            },
            starters(&safe_set, cfg.swarm.particles, &mut rng),
            &swarm(3),
        );

        let mut u = minimizer.x;
        if expander.value > 0.0 && m.f_std(&expander.x) > m.f_std(&u) {
            u = expander.x;
        }
        let width = 2.0 * cfg.beta * m.f_std(&u);
        let ucb = m.g_ucb(&u);
        let mut x = bounds.from_unit(&u);
        bounds.clip(&mut x);
        let mut o = oracle(&GainVector::from_slice(&x), data.len())?;
        o.clamp_to(&ceiling);
        unit_inputs.push(bounds.to_unit(&x));
        data.push(x.clone(), o.y, o.z);
        history.push(IterationRecord {
            iter: it,
            x,
            y: o.y,
            z: o.z,
            acq: width,
            diverged: o.diverged,
            stop: it == cfg.iterations,
            constraint_ucb: Some(ucb),
        });
    }

    let best = best_observation(&data, c_b);
    Ok(TuneReport {
        method: "safeopt".into(),
        seed: cfg.seed,
        bounds,
        initial_design,
        hyperparameters: Hyperparameters::of(&cost_prior, &cons_prior),
        iterations: history.len(),
        history,
        final_cost: best.y,
        stop_reason,
        iteration_of_stop: data.len(),
        violations: count_violations(&data, c_b),
        all_initial_infeasible: false,
        best,
        ceiling,
    })
}

/// SafeOpt on the simulated axis, with the same oracle and noise convention
/// as [`crate::tuner::tune`].
pub fn safeopt_tune(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    noise: &NoiseModel,
    cfg: &SafeOptConfig,
) -> Result<TuneReport> {
    plant.validate()?;
    profile.validate()?;
    let mut report = safeopt_tune_with(cfg, |g, k| {
        evaluate_candidate(
            g,
            plant,
            profile,
            &cfg.weights,
            &noise.with_seed(noise.seed.wrapping_add(k as u64)),
        )
    })?;
    report.final_cost = noise_free_cost(plant, profile, &cfg.weights, &report.best.x)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricBundle;
    use crate::tuner::{tune_with, TunerConfig};
    use rand_distr::{Distribution, Normal};

    fn bowl(a: f64, b: f64, noise_std: f64, seed: u64) -> impl FnMut(&GainVector, usize) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, noise_std.max(1e-300)).unwrap();
        move |g, _| {
            let n = if noise_std > 0.0 { d.sample(&mut rng) } else { 0.0 };
            Ok(Observation {
                x: *g,
                y: (g.kp - a).powi(2) + (g.kv - b).powi(2) + n,
                z: g.kv,
                metrics: MetricBundle::default(),
                diverged: false,
            })
        }
    }

    fn box15() -> Bounds {
        Bounds::new(vec![1.0, 1.0], vec![5.0, 5.0]).unwrap()
    }

    fn cfg(c_b: f64, seed: u64) -> SafeOptConfig {
        SafeOptConfig {
            bounds: box15(),
            seed_region: Some(Bounds::new(vec![1.0, 1.0], vec![2.5, 2.5]).unwrap()),
            iterations: 50,
            weights: CostWeights {
                constraint_bound: c_b,
                ..Default::default()
            },
            seed,
            ..Default::default()
        }
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        0.5 * (v[(n - 1) / 2] + v[n / 2])
    }

    #[test]
    fn toy_bowl_matches_cbo_location_but_not_its_cost() {
        let (a, b) = (2.7, 3.4);
        let exact = |x: &[f64]| (x[0] - a).powi(2) + (x[1] - b).powi(2);
        let mut dist = Vec::new();
        let mut so_cost = Vec::new();
        let mut cbo_cost = Vec::new();
        for s in 0..10 {
            let so = safeopt_tune_with(&cfg(4.0, s), bowl(a, b, 1e-3, s)).unwrap();
            let cbo_cfg = TunerConfig {
                bounds: box15(),
                weights: CostWeights {
                    constraint_bound: 4.0,
                    ..Default::default()
                },
                eta_limit: 0.0,
                max_iterations: 50,
                seed: s,
                ..Default::default()
            };
            let cbo = tune_with(&cbo_cfg, bowl(a, b, 1e-3, s)).unwrap();
            let d = ((so.best.x[0] - cbo.best.x[0]).powi(2) + (so.best.x[1] - cbo.best.x[1]).powi(2)).sqrt();
            dist.push(d / box15().diagonal());
            so_cost.push(exact(&so.best.x));
            cbo_cost.push(exact(&cbo.best.x));
        }
        assert!(median(dist.clone()) <= 0.05, "{dist:?}");
        assert!(median(so_cost.clone()) >= median(cbo_cost.clone()), "{so_cost:?} vs {cbo_cost:?}");
    }

    #[test]
    fn proposals_are_certified_and_conservative_mode_stays_feasible() {
        // optimum (2.7, 3.4) lies beyond kv <= 2.5; seeds sit well inside
        let mut violations = Vec::new();
        for s in 0..10 {
            let mut c = cfg(2.5, s);
            c.seed_region = Some(Bounds::new(vec![1.0, 1.0], vec![4.0, 2.0]).unwrap());
            c.hyper_mode = HyperMode::FixedConservative;
            c.iterations = 25;
            let r = safeopt_tune_with(&c, bowl(2.7, 3.4, 0.0, s)).unwrap();
            for h in &r.history {
                assert!(h.constraint_ucb.unwrap() <= 2.5 + 1e-12, "{h:?}");
            }
            violations.push(r.violations as f64);
        }
        assert_eq!(median(violations), 0.0);
    }

    #[test]
    fn unsafe_seed_is_rejected() {
        let mut c = cfg(2.0, 0);
        c.safe_seed_set = vec![GainVector::with_fixed_ti(2.0, 1.5), GainVector::with_fixed_ti(2.0, 3.0)];
        match safeopt_tune_with(&c, bowl(2.7, 3.4, 0.0, 0)) {
            Err(Error::UnsafeSeed { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic_and_serialize() {
        let mut c = cfg(3.0, 5);
        c.iterations = 6;
        let r1 = safeopt_tune_with(&c, bowl(2.0, 2.0, 0.0, 5)).unwrap();
        let r2 = safeopt_tune_with(&c, bowl(2.0, 2.0, 0.0, 5)).unwrap();
        assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
        assert_eq!(r1.method, "safeopt");
        assert_eq!(r1.iterations, 6);
        assert_eq!(r1.iteration_of_stop, 15 + 6);
        let back: TuneReport = serde_json::from_str(&r1.to_json().unwrap()).unwrap();
        assert_eq!(back, r1);
    }

    #[test]
    fn config_validation() {
        let mut c = SafeOptConfig::default();
        c.beta = 0.0;
        assert_eq!(c.validate().unwrap_err().config_code(), Some("E_SAFEOPT"));
        let mut c = SafeOptConfig::default();
        c.seed_region = None;
        assert_eq!(c.validate().unwrap_err().config_code(), Some("E_SAFEOPT"));
        assert_eq!(SafeOptConfig::default().seeds().len(), 15);
    }
}
