//! Constrained Bayesian optimization loop: Latin-hypercube initial design,
//! frozen-hyperparameter GP surrogates, CEI sampling and the relative
//! acquisition stopping rule.

use std::io::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::acquisition::{argmax_grid, argmax_pso, feasible_best, AcquisitionContext, PsoConfig};
use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::gp::{fit, Dataset, FitConfig, GpModel, KernelParams};
use crate::metrics::{evaluate_candidate, CostWeights, DivergenceCeiling, Observation};
use crate::sim::{GainVector, NoiseModel, PlantParams, ReferenceProfile};

pub use crate::design::latin_hypercube;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AcquisitionOptimizer {
    Grid { resolution: Vec<usize> },
    Pso(PsoConfig),
}

impl Default for AcquisitionOptimizer {
    fn default() -> Self {
        AcquisitionOptimizer::Pso(PsoConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    pub bounds: Bounds,
    /// Initial design size; 15 in 2-D and 25 in 3-D when unset.
    pub m_init: Option<usize>,
    pub eta_limit: f64,
    pub consecutive_required: usize,
    pub max_iterations: usize,
    pub optimizer: AcquisitionOptimizer,
    pub weights: CostWeights,
    pub fit: FitConfig,
    /// Shrinks the box to this fraction of the critical gains when the
    /// weights carry them.
    pub safety_margin: Option<f64>,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            bounds: Bounds::table2(2),
            m_init: None,
            eta_limit: 0.05,
            consecutive_required: 3,
            max_iterations: 100,
            optimizer: AcquisitionOptimizer::default(),
            weights: CostWeights::default(),
            fit: FitConfig::default(),
            safety_margin: Some(0.75),
            seed: 0,
        }
    }
}

impl TunerConfig {
    pub fn initial_size(&self) -> usize {
        self.m_init
            .unwrap_or(if self.bounds.dims() == 3 { 25 } else { 15 })
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.weights.validate()?;
        if self.initial_size() < 2 {
            return Err(Error::config("E_TUNER", "the initial design needs at least two points"));
        }
        if !(0.0..1.0).contains(&self.eta_limit) {
            return Err(Error::config("E_TUNER", "eta_limit must lie in [0, 1)"));
        }
        if self.max_iterations < 1 || self.consecutive_required < 1 {
            return Err(Error::config(
                "E_TUNER",
                "max_iterations and consecutive_required must be at least 1",
            ));
        }
        if let Some(m) = self.safety_margin {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::config("E_TUNER", "safety margin must lie in (0, 1]"));
            }
        }
        match &self.optimizer {
            AcquisitionOptimizer::Grid { resolution } => {
                if resolution.len() != self.bounds.dims() || resolution.iter().any(|&r| r < 2) {
                    return Err(Error::config(
                        "E_TUNER",
                        "grid resolution needs one entry >= 2 per tuned dimension",
                    ));
                }
            }
            AcquisitionOptimizer::Pso(p) => p.validate()?,
        }
        Ok(())
    }

    /// The box actually searched, after the optional safety-margin shrink.
    pub fn effective_bounds(&self) -> Result<Bounds> {
        match (self.weights.critical_gains, self.safety_margin) {
            (Some(c), Some(m)) => self.bounds.shrink_to_margin(c.kp_crit, c.kv_crit, m),
            _ => Ok(self.bounds.clone()),
        }
    }
}

/// True when each of the last `consecutive_required` acquisition values is at
/// most `eta_limit` times the largest value strictly before it.
pub fn stopping_check(acq_history: &[f64], eta_limit: f64, consecutive_required: usize) -> bool {
    let n = acq_history.len();
    if consecutive_required == 0 || n < consecutive_required {
        return false;
    }
    (n - consecutive_required..n).all(|i| {
        if i == 0 {
            return false;
        }
        let prev_max = acq_history[..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        acq_history[i] <= eta_limit * prev_max
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No candidate could be certified safe.
    EmptySafeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based BO iteration.
    pub iter: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: f64,
    pub acq: f64,
    pub diverged: bool,
    pub stop: bool,
    /// Upper confidence bound of the constraint when the point was proposed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_ucb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub cost: KernelParams,
    pub constraint: KernelParams,
    /// Frozen target centering of each model.
    #[serde(default)]
    pub cost_offset: f64,
    #[serde(default)]
    pub constraint_offset: f64,
}

impl Hyperparameters {
    pub(crate) fn of(cost: &GpModel, constraint: &GpModel) -> Self {
        Hyperparameters {
            cost: cost.kernel.clone(),
            constraint: constraint.kernel.clone(),
            cost_offset: cost.offset,
            constraint_offset: constraint.offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub x: Vec<f64>,
    pub y: f64,
    pub z: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub method: String,
    pub seed: u64,
    pub bounds: Bounds,
    pub initial_design: Dataset,
    pub hyperparameters: Hyperparameters,
    pub history: Vec<IterationRecord>,
    pub best: BestPoint,
    /// Noise-free cost at the best point (equals `best.y` for noise-free
    /// oracles).
    pub final_cost: f64,
    pub stop_reason: StopReason,
    /// Total evaluations when the campaign stopped (initial design included).
    pub iteration_of_stop: usize,
    /// BO iterations run after the initial design.
    pub iterations: usize,
    /// Observations with constraint above the bound, initial design included.
    pub violations: usize,
    pub all_initial_infeasible: bool,
    pub ceiling: DivergenceCeiling,
}

impl TuneReport {
    /// Running best feasible cost after each evaluation (initial design first).
    pub fn running_best(&self, bound: f64) -> Vec<f64> {
        let mut best = f64::INFINITY;
        let ys = self
            .initial_design
            .cost_targets
            .iter()
            .zip(&self.initial_design.constraint_targets)
            .chain(self.history.iter().map(|r| (&r.y, &r.z)));
        ys.map(|(y, z)| {
            if *z <= bound && *y < best {
                best = *y;
            }
            best
        })
        .collect()
    }

    /// Every observation in sampling order, initial design first.
    pub fn observations(&self) -> Dataset {
        let mut d = self.initial_design.clone();
        for r in &self.history {
            d.push(r.x.clone(), r.y, r.z);
        }
        d
    }

    /// Cost and constraint GPs conditioned on all observations with the
    /// frozen hyperparameters.
    pub fn final_models(&self) -> Result<(GpModel, GpModel)> {
        let d = self.observations();
        let u: Vec<Vec<f64>> = d.inputs.iter().map(|x| self.bounds.to_unit(x)).collect();
        let h = &self.hyperparameters;
        Ok((
            GpModel::with_offset(h.cost.clone(), u.clone(), d.cost_targets, h.cost_offset)?,
            GpModel::with_offset(h.constraint.clone(), u, d.constraint_targets, h.constraint_offset)?,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `iter,kp,kv,ti,cost,constraint,acq`; initial-design rows carry
    /// `iter = 0` and an empty acquisition value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,kp,kv,ti,cost,constraint,acq")?;
        let ti = |x: &[f64]| GainVector::from_slice(x).ti;
        let d = &self.initial_design;
        for i in 0..d.len() {
            let x = &d.inputs[i];
            writeln!(
                w,
                "0,{},{},{},{},{},",
                x[0],
                x[1],
                ti(x),
                d.cost_targets[i],
                d.constraint_targets[i]
            )?;
        }
        for r in &self.history {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.x[0],
                r.x[1],
                ti(&r.x),
                r.y,
                r.z,
                r.acq
            )?;
        }
        Ok(())
    }
}

/// Derives independent sub-seeds from a campaign seed.
pub(crate) fn subseed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the constrained BO loop against an arbitrary oracle.
///
/// `oracle(gains, k)` evaluates the `k`-th experiment (0-based, initial design
/// included) and returns the observation with raw scores; diverged results
/// are clamped to the campaign ceiling.
pub fn tune_with<F>(cfg: &TunerConfig, mut oracle: F) -> Result<TuneReport>
where
    F: FnMut(&GainVector, usize) -> Result<Observation>,
{
    cfg.validate()?;
    let bounds = cfg.effective_bounds()?;
    let dims = bounds.dims();
    let c_b = cfg.weights.constraint_bound;

    // (i) initial design
    let design = latin_hypercube(cfg.initial_size(), dims, subseed(cfg.seed, 1));
    let mut raw = Vec::with_capacity(design.len());
    for (k, u) in design.iter().enumerate() {
        let x = bounds.from_unit(u);
        raw.push(oracle(&GainVector::from_slice(&x), k)?);
    }
    let init_costs: Vec<f64> = raw.iter().filter(|o| !o.diverged).map(|o| o.y).collect();
    let ceiling = DivergenceCeiling::from_initial(&init_costs, c_b);
    let mut data = Dataset::default();
    let mut unit_inputs = Vec::new();
    for mut o in raw {
        o.clamp_to(&ceiling);
        let x = o.x.to_vec(dims);
        unit_inputs.push(bounds.to_unit(&x));
        data.push(x, o.y, o.z);
    }
    let initial_design = data.clone();
    let all_initial_infeasible = data.constraint_targets.iter().all(|z| *z > c_b);
    if all_initial_infeasible {
        info!("no feasible point in the initial design; continuing with the overall best");
    }

    // (ii) hyperparameters fitted once, then frozen
    let cost_fit = fit(&unit_inputs, &data.cost_targets, &cfg.fit, subseed(cfg.seed, 2))?;
    let cons_fit = fit(&unit_inputs, &data.constraint_targets, &cfg.fit, subseed(cfg.seed, 3))?;
    let cost_prior = cost_fit.model;
    let cons_prior = cons_fit.model;
    debug!("cost kernel {:?}", cost_prior.kernel);
    debug!("constraint kernel {:?}", cons_prior.kernel);

    // (iii) sampling loop
    let mut history = Vec::new();
    let mut acq_history = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for it in 1..=cfg.max_iterations {
        let f_model: GpModel = cost_prior.condition(unit_inputs.clone(), data.cost_targets.clone())?;
        let g_model: GpModel = cons_prior.condition(unit_inputs.clone(), data.constraint_targets.clone())?;
        let ctx = AcquisitionContext {
            cost_model: &f_model,
            constraint_model: &g_model,
            best_observed: feasible_best(&data.cost_targets, &data.constraint_targets, c_b),
            threshold: c_b,
            bounds: &bounds,
        };
        let arg = match &cfg.optimizer {
            AcquisitionOptimizer::Grid { resolution } => argmax_grid(&ctx, resolution),
            AcquisitionOptimizer::Pso(p) => {
                argmax_pso(&ctx, &p.with_seed(subseed(cfg.seed, 100 + it as u64)))
            }
        };
        let mut x = arg.x;
        bounds.clip(&mut x);
        let mut o = oracle(&GainVector::from_slice(&x), data.len())?;
        o.clamp_to(&ceiling);
        unit_inputs.push(bounds.to_unit(&x));
        data.push(x.clone(), o.y, o.z);
        acq_history.push(arg.value);
        let stop = stopping_check(&acq_history, cfg.eta_limit, cfg.consecutive_required);
        history.push(IterationRecord {
            iter: it,
            x,
            y: o.y,
            z: o.z,
            acq: arg.value,
            diverged: o.diverged,
            stop,
            constraint_ucb: None,
        });
        if stop {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    // (iv) best observation
    let n = data.len();
    let best = best_observation(&data, c_b);
    let violations = count_violations(&data, c_b);
    Ok(TuneReport {
        method: "cbo".into(),
        seed: cfg.seed,
        bounds,
        initial_design,
        hyperparameters: Hyperparameters::of(&cost_prior, &cons_prior),
        iterations: history.len(),
        history,
        final_cost: best.y,
        best,
        stop_reason,
        iteration_of_stop: n,
        violations,
        all_initial_infeasible,
        ceiling,
    })
}

/// Lowest-cost feasible observation, or the lowest-cost one overall when
/// nothing is feasible. Ties go to the earlier observation.
pub(crate) fn best_observation(data: &Dataset, c_b: f64) -> BestPoint {
    let n = data.len();
    let feasible: Vec<usize> = (0..n).filter(|&i| data.constraint_targets[i] <= c_b).collect();
    let pool: Vec<usize> = if feasible.is_empty() { (0..n).collect() } else { feasible };
    let bi = pool
        .iter()
        .copied()
        .min_by(|&a, &b| data.cost_targets[a].total_cmp(&data.cost_targets[b]).then(a.cmp(&b)))
        .expect("non-empty data");
    BestPoint {
        x: data.inputs[bi].clone(),
        y: data.cost_targets[bi],
        z: data.constraint_targets[bi],
        feasible: data.constraint_targets[bi] <= c_b,
    }
}

pub(crate) fn count_violations(data: &Dataset, c_b: f64) -> usize {
    data.constraint_targets.iter().filter(|z| **z > c_b).count()
}

/// Tunes the servo loop on the simulated axis.
///
/// Experiment `k` uses noise seed `noise.seed + k`. The reported final cost
/// is the noise-free cost of the best point.
pub fn tune(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    noise: &NoiseModel,
    cfg: &TunerConfig,
) -> Result<TuneReport> {
    plant.validate()?;
    profile.validate()?;
    let mut report = tune_with(cfg, |g, k| {
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

pub(crate) fn noise_free_cost(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    weights: &CostWeights,
    x: &[f64],
) -> Result<f64> {
    let g = GainVector::from_slice(x);
    Ok(evaluate_candidate(&g, plant, profile, weights, &NoiseModel::off())?.y)
}
