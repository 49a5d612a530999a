use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trapezoidal operation cycle: move out by `stroke`, dwell at the operation
/// location, move back, settle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceProfile {
    /// mm
    pub stroke: f64,
    /// mm/s
    pub cruise_velocity: f64,
    /// mm/s^2
    pub accel: f64,
    /// s
    pub dwell_time: f64,
    /// s
    pub sample_time: f64,
    /// Idle time before the forward move [s].
    pub lead_time: f64,
    /// Idle time after the return move [s].
    pub settle_time: f64,
    /// Reset point [mm].
    pub start_position: f64,
    /// Velocity and force feedforward from the reference.
    pub feedforward: bool,
}

impl Default for ReferenceProfile {
    fn default() -> Self {
        ReferenceProfile {
            stroke: 20.0,
            cruise_velocity: 30.0,
            accel: 600.0,
            dwell_time: 1.0,
            sample_time: 0.5e-3,
            lead_time: 0.01,
            settle_time: 0.25,
            start_position: 0.0,
            feedforward: true,
        }
    }
}

/// Sampled reference signals plus the operation-window indices.
#[derive(Debug, Clone)]
pub struct SampledReference {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub accel: Vec<f64>,
    pub k_sp: usize,
    pub k_st: usize,
}

impl ReferenceProfile {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.stroke) || !pos(self.cruise_velocity) || !pos(self.accel) {
            return Err(Error::config(
                "E_PROFILE",
                "stroke, cruise velocity and acceleration must be positive",
            ));
        }
        if !pos(self.sample_time) || !pos(self.dwell_time) {
            return Err(Error::config(
                "E_PROFILE",
                "sample time and dwell time must be positive",
            ));
        }
        if self.lead_time < 0.0 || self.settle_time < 0.0 {
            return Err(Error::config("E_PROFILE", "idle times must be non-negative"));
        }
        if self.dwell_time < 2.0 * self.sample_time || self.settle_time < 2.0 * self.sample_time {
            return Err(Error::config(
                "E_PROFILE",
                "dwell and settle phases must span at least two samples",
            ));
        }
        Ok(())
    }

    /// Duration of one point-to-point move [s].
    pub fn move_duration(&self) -> f64 {
        let (t_acc, t_cruise) = self.phase_times();
        2.0 * t_acc + t_cruise
    }

    /// Acceleration and cruise durations; triangular when the stroke is too
    /// short to reach cruise velocity.
    fn phase_times(&self) -> (f64, f64) {
        let t_acc = self.cruise_velocity / self.accel;
        let d_acc = 0.5 * self.accel * t_acc * t_acc;
        if 2.0 * d_acc >= self.stroke {
            ((self.stroke / self.accel).sqrt(), 0.0)
        } else {
            (t_acc, (self.stroke - 2.0 * d_acc) / self.cruise_velocity)
        }
    }

    /// Offset, velocity and acceleration `t` seconds into a forward move.
    fn move_state(&self, t: f64) -> (f64, f64, f64) {
        let (ta, tc) = self.phase_times();
        let a = self.accel;
        let vpk = a * ta;
        let total = 2.0 * ta + tc;
        if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < ta {
            (0.5 * a * t * t, a * t, a)
        } else if t < ta + tc {
            let s = t - ta;
            (0.5 * a * ta * ta + vpk * s, vpk, 0.0)
        } else if t < total {
            let r = total - t;
            (self.stroke - 0.5 * a * r * r, a * r, -a)
        } else {
            (self.stroke, 0.0, 0.0)
        }
    }

    pub fn cycle_duration(&self) -> f64 {
        self.lead_time + 2.0 * self.move_duration() + self.dwell_time + self.settle_time
    }

    pub fn sample(&self) -> SampledReference {
        let ts = self.sample_time;
        let t_move = self.move_duration();
        let t_arrive = self.lead_time + t_move;
        let t_depart = t_arrive + self.dwell_time;
        let n = (self.cycle_duration() / ts).ceil() as usize + 1;

        let mut position = Vec::with_capacity(n);
        let mut velocity = Vec::with_capacity(n);
        let mut accel = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 * ts;
            let (p, v, a) = if t < t_depart {
                self.move_state(t - self.lead_time)
            } else {
                let (p, v, a) = self.move_state(t - t_depart);
                (self.stroke - p, -v, -a)
            };
            position.push(self.start_position + p);
            velocity.push(v);
            accel.push(a);
        }
        // Small tolerance keeps exact-multiple boundaries on the intended side.
        let k_sp = ((t_arrive / ts) - 1e-9).ceil() as usize;
        let k_st = ((t_depart / ts) + 1e-9).floor() as usize;
        SampledReference {
            position,
            velocity,
            accel,
            k_sp,
            k_st,
        }
    }
}
