use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gains::GainVector;
use super::plant::{ripple_force, PlantParams};
use super::profile::ReferenceProfile;
use crate::error::{Error, Result};

/// State magnitude treated as numerical divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Encoder noise on the measured position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// mm
    pub encoder_std: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub const ENCODER_PRECISION_MM: f64 = 1e-4;

    pub fn off() -> Self {
        NoiseModel {
            encoder_std: 0.0,
            seed: 0,
        }
    }

    pub fn encoder(seed: u64) -> Self {
        NoiseModel {
            encoder_std: Self::ENCODER_PRECISION_MM,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseModel { seed, ..self }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::encoder(0)
    }
}

/// One simulated operation cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// s
    pub sample_time: f64,
    /// Reference minus measured position [mm].
    pub position_error: Vec<f64>,
    /// Measured position [mm].
    pub position: Vec<f64>,
    /// mm/s
    pub velocity: Vec<f64>,
    /// Force command after saturation [N].
    pub force_command: Vec<f64>,
    pub k_sp: usize,
    pub k_st: usize,
    /// Set when some state left `DIVERGENCE_LIMIT`; later samples repeat the
    /// last finite values.
    pub diverged: bool,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.position_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position_error.is_empty()
    }

    /// Error samples from arrival to departure, inclusive.
    pub fn dwell_error(&self) -> &[f64] {
        &self.position_error[self.k_sp..=self.k_st]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.position_error.len();
        if self.velocity.len() != n || self.force_command.len() != n || self.position.len() != n {
            return Err(Error::config("E_TRACE", "trace series differ in length"));
        }
        if self.k_sp >= self.k_st || n < self.k_st + 2 {
            return Err(Error::config(
                "E_TRACE",
                format!(
                    "invalid operation window k_sp={} k_st={} len={n}",
                    self.k_sp, self.k_st
                ),
            ));
        }
        Ok(())
    }

    /// Writes `t,err_mm,vel_mm_s,force_N`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,err_mm,vel_mm_s,force_N")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:.6},{},{},{}",
                k as f64 * self.sample_time,
                self.position_error[k],
                self.velocity[k],
                self.force_command[k]
            )?;
        }
        Ok(())
    }
}

/// Rigid axis state advanced one sample at a time under a force command.
#[derive(Debug, Clone)]
pub(crate) struct Axis<'a> {
    params: &'a PlantParams,
    ts: f64,
    /// m
    pub pos: f64,
    /// m/s
    pub vel: f64,
    applied: f64,
    delay_line: VecDeque<f64>,
    lag_alpha: Option<f64>,
}

impl<'a> Axis<'a> {
    /// Axis at rest at `pos_mm` with `force` already flowing through the
    /// actuator path.
    pub fn new(params: &'a PlantParams, ts: f64, pos_mm: f64, force: f64) -> Self {
        Axis {
            params,
            ts,
            pos: pos_mm * 1e-3,
            vel: 0.0,
            applied: force,
            delay_line: std::iter::repeat_n(force, params.force_delay_samples).collect(),
            lag_alpha: params.current_lag.map(|tau| 1.0 - (-ts / tau).exp()),
        }
    }

    pub fn position_mm(&self) -> f64 {
        self.pos * 1e3
    }

    fn disturbance(&self, p_mm: f64) -> f64 {
        let p = self.params;
        let coulomb = if self.vel > 0.0 {
            p.coulomb_friction
        } else if self.vel < 0.0 {
            -p.coulomb_friction
        } else {
            0.0
        };
        p.ripple_sign * ripple_force(p_mm, p) + coulomb
    }

    /// Semi-implicit Euler step: velocity first, then position with the new
    /// velocity.
    pub fn step(&mut self, command: f64) {
        let delayed = if self.delay_line.is_empty() {
            command
        } else {
            self.delay_line.push_back(command);
            self.delay_line.pop_front().unwrap()
        };
        self.applied = match self.lag_alpha {
            Some(alpha) => self.applied + alpha * (delayed - self.applied),
            None => delayed,
        };
        let acc = (self.applied - self.params.damping * self.vel - self.disturbance(self.position_mm()))
            / self.params.mass;
        self.vel += acc * self.ts;
        self.pos += self.vel * self.ts;
    }

    pub fn blown(&self) -> bool {
        !(self.pos.is_finite() && self.vel.is_finite())
            || self.pos.abs() * 1e3 > DIVERGENCE_LIMIT
            || self.vel.abs() * 1e3 > DIVERGENCE_LIMIT
    }
}

/// Fixed-step simulation of the P (position) / PI (velocity) cascade around
/// the linear axis.
///
/// Controller and plant run at the profile's sample time. The plant is
/// advanced with semi-implicit Euler (velocity first, then position with the
/// new velocity). The PI integrator starts preloaded with the disturbance
/// force at the reset point, so an ideal axis begins at rest.
pub fn simulate_cycle(
    params: &PlantParams,
    gains: &GainVector,
    profile: &ReferenceProfile,
    noise: &NoiseModel,
) -> SimTrace {
    let reference = profile.sample();
    let n = reference.position.len();
    let ts = profile.sample_time;

    let kp = gains.kp_si();
    let kv = gains.kv_si();
    let ti = gains.ti_si();
    let m = params.mass;
    let v_lim = params.velocity_limit * 1e-3;
    let f_lim = params.force_limit;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = (noise.encoder_std > 0.0).then(|| Normal::new(0.0, noise.encoder_std).unwrap());

    let hold = params.ripple_sign * ripple_force(reference.position[0], params);
    let mut integ = hold.clamp(-f_lim, f_lim) * ti / kv;
    let mut axis = Axis::new(params, ts, reference.position[0], hold.clamp(-f_lim, f_lim));

    let mut trace = SimTrace {
        sample_time: ts,
        position_error: Vec::with_capacity(n),
        position: Vec::with_capacity(n),
        velocity: Vec::with_capacity(n),
        force_command: Vec::with_capacity(n),
        k_sp: reference.k_sp,
        k_st: reference.k_st,
        diverged: false,
    };

    for k in 0..n {
        let pos_mm = axis.position_mm();
        let vel = axis.vel;
        let meas_mm = match &normal {
            Some(d) => pos_mm + d.sample(&mut rng),
            None => pos_mm,
        };
        let err_mm = reference.position[k] - meas_mm;

        let (v_ff, f_ff) = if profile.feedforward {
            (reference.velocity[k] * 1e-3, m * reference.accel[k] * 1e-3)
        } else {
            (0.0, 0.0)
        };
        let v_cmd = (kp * err_mm * 1e-3 + v_ff).clamp(-v_lim, v_lim);
        let ev = v_cmd - vel;

        let u_raw = kv * (ev + integ / ti) + f_ff;
        let u = u_raw.clamp(-f_lim, f_lim);
        // conditional integration: freeze while saturated in the same direction
        let saturated = u_raw != u;
        if !saturated || ev * u_raw < 0.0 {
            integ += ev * ts;
        }

        trace.position_error.push(err_mm);
        trace.position.push(meas_mm);
        trace.velocity.push(vel * 1e3);
        trace.force_command.push(u);

        axis.step(u);
        let blown = axis.blown() || !integ.is_finite();
        if blown {
            trace.diverged = true;
            let last_err = trace.position_error[k];
            let last_pos = trace.position[k];
            let last_vel = trace.velocity[k];
            let last_u = trace.force_command[k];
            for _ in k + 1..n {
                trace.position_error.push(last_err);
                trace.position.push(last_pos);
                trace.velocity.push(last_vel);
                trace.force_command.push(last_u);
            }
            break;
        }
    }
    trace
}
