//! Performance metrics, weighted cost and overshoot constraint of one cycle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{simulate_cycle, GainVector, NoiseModel, PlantParams, ReferenceProfile, SimTrace};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricBundle {
    /// Largest error after departing the operation location [mm].
    pub c_sp: f64,
    /// L1 error over the dwell window scaled by Ts [mm*s].
    pub c_ss: f64,
    /// Largest error while at the operation location (overshoot) [mm].
    pub c_st: f64,
    /// Proximity penalty to the critical gains.
    pub c_crit: f64,
}

impl MetricBundle {
    pub fn as_array(&self) -> [f64; 4] {
        [self.c_sp, self.c_ss, self.c_st, self.c_crit]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPair {
    pub kp_crit: f64,
    pub kv_crit: f64,
}

/// Weight vector over `(C_SP, C_SS, C_ST, C_crit)` plus the constraint bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w: [f64; 4],
    /// Bound on `C_ST` [mm].
    pub constraint_bound: f64,
    pub rho_crit: f64,
    pub critical_gains: Option<CriticalPair>,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w: [0.25, 0.25, 0.5, 0.0],
            constraint_bound: 1e-3,
            rho_crit: 1e-4,
            critical_gains: None,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("E_WEIGHTS", "weights must be finite and non-negative"));
        }
        if !(self.constraint_bound.is_finite() && self.constraint_bound > 0.0) {
            return Err(Error::config("E_BOUND", "constraint bound must be positive"));
        }
        if !(self.rho_crit.is_finite() && self.rho_crit >= 0.0) {
            return Err(Error::config("E_WEIGHTS", "rho_crit must be non-negative"));
        }
        if self.w[3] > 0.0 {
            match self.critical_gains {
                Some(c) if c.kp_crit > 0.0 && c.kv_crit > 0.0 => {}
                Some(_) => {
                    return Err(Error::config("E_CRIT", "critical gains must be positive"))
                }
                None => {
                    return Err(Error::config(
                        "E_CRIT",
                        "proximity weight is positive but no critical gains are set",
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn cost(&self, m: &MetricBundle) -> f64 {
        self.w.iter().zip(m.as_array()).map(|(w, c)| w * c).sum()
    }
}

/// Evaluates the metrics of one trace.
///
/// Returns the bundle, the weighted cost and the constraint value (`C_ST`).
pub fn compute_metrics(
    trace: &SimTrace,
    gains: &GainVector,
    weights: &CostWeights,
) -> Result<(MetricBundle, f64, f64)> {
    trace.validate()?;
    let e = &trace.position_error;
    let max_abs = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dwell = trace.dwell_error();

    let c_crit = match (weights.critical_gains, weights.w[3] > 0.0) {
        (Some(c), _) => {
            weights.rho_crit * (gains.kp / c.kp_crit).exp() * (gains.kv / c.kv_crit).exp()
        }
        (None, true) => return Err(Error::MissingCriticalGains),
        (None, false) => 0.0,
    };
    let m = MetricBundle {
        c_sp: max_abs(&e[trace.k_st + 1..]),
        c_ss: trace.sample_time * dwell.iter().map(|x| x.abs()).sum::<f64>(),
        c_st: max_abs(dwell),
        c_crit,
    };
    Ok((m, weights.cost(&m), m.c_st))
}

/// One evaluated candidate: gains `x`, cost `y`, constraint `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: GainVector,
    pub y: f64,
    pub z: f64,
    pub metrics: MetricBundle,
    pub diverged: bool,
}

/// Scores assigned to diverged traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCeiling {
    pub cost: f64,
    pub constraint: f64,
}

impl DivergenceCeiling {
    /// Ten times the largest finite initial-design cost, ten times the bound.
    pub fn from_initial(costs: &[f64], constraint_bound: f64) -> Self {
        let max = costs
            .iter()
            .copied()
            .filter(|c| c.is_finite())
            .fold(0.0f64, f64::max);
        DivergenceCeiling {
            cost: if max > 0.0 { 10.0 * max } else { 1.0 },
            constraint: 10.0 * constraint_bound,
        }
    }
}

impl Observation {
    /// Replaces the scores of a diverged (or non-finite) observation.
    pub fn clamp_to(&mut self, ceiling: &DivergenceCeiling) {
        if self.diverged || !self.y.is_finite() || !self.z.is_finite() {
            self.y = ceiling.cost;
            self.z = ceiling.constraint;
        }
    }
}

/// Simulates one cycle at `gains` and scores it.
///
/// Diverged traces come back flagged with their raw scores; campaigns map
/// them onto a [`DivergenceCeiling`].
pub fn evaluate_candidate(
    gains: &GainVector,
    plant: &PlantParams,
    profile: &ReferenceProfile,
    weights: &CostWeights,
    noise: &NoiseModel,
) -> Result<Observation> {
    let trace = simulate_cycle(plant, gains, profile, noise);
    let (metrics, y, z) = compute_metrics(&trace, gains, weights)?;
    Ok(Observation {
        x: *gains,
        y,
        z,
        metrics,
        diverged: trace.diverged,
    })
}

/// Writes `kp,kv,ti,c_sp,c_ss,c_st,c_crit,cost,constraint`.
pub fn write_metrics_csv<W: Write>(rows: &[Observation], mut w: W) -> Result<()> {
    writeln!(w, "kp,kv,ti,c_sp,c_ss,c_st,c_crit,cost,constraint")?;
    for o in rows {
        let m = &o.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            o.x.kp, o.x.kv, o.x.ti, m.c_sp, m.c_ss, m.c_st, m.c_crit, o.y, o.z
        )?;
    }
    Ok(())
}
