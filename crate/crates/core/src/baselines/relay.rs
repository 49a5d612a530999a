use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{kp_from_si, kv_from_si, ripple_force, GainVector, PlantParams, ReferenceProfile};
use crate::sim::Axis;

/// Tuning rules applied to the measured ultimate gains and periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelayRules {
    /// Kv = kv_factor * Ku of the velocity loop.
    pub kv_factor: f64,
    /// Ti = ti_factor * Tu of the velocity loop.
    pub ti_factor: f64,
    /// Kp = kp_factor * Ku of the position loop.
    pub kp_factor: f64,
}

impl Default for RelayRules {
    fn default() -> Self {
        RelayRules {
            kv_factor: 0.45,
            ti_factor: 0.85,
            kp_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelayConfig {
    /// Force relay amplitude for the velocity loop [N].
    pub velocity_amplitude: f64,
    /// Velocity-command relay amplitude for the position loop [mm/s].
    pub position_amplitude: f64,
    /// Switching band as a fraction of the last measured oscillation
    /// amplitude.
    pub hysteresis: f64,
    pub cycles_to_measure: usize,
    /// Relative spread allowed between measured cycles.
    pub settle_tolerance: f64,
    /// Length of each relay experiment [s].
    pub duration: f64,
    pub rules: RelayRules,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            velocity_amplitude: 400.0,
            position_amplitude: 10.0,
            hysteresis: 0.9,
            cycles_to_measure: 5,
            settle_tolerance: 0.05,
            duration: 2.0,
            rules: RelayRules::default(),
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("E_RELAY", m.to_string()));
        if !(self.velocity_amplitude > 0.0 && self.position_amplitude > 0.0) {
            return bad("relay amplitudes must be positive");
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            return bad("hysteresis must lie in [0, 1)");
        }
        if self.cycles_to_measure < 3 {
            return bad("at least three cycles must be measured");
        }
        if !(self.settle_tolerance > 0.0 && self.duration > 0.0) {
            return bad("settle tolerance and duration must be positive");
        }
        let r = &self.rules;
        if !(r.kv_factor > 0.0 && r.ti_factor > 0.0 && r.kp_factor > 0.0) {
            return bad("rule constants must be positive");
        }
        Ok(())
    }
}

/// Limit cycle measured in one relay experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayStage {
    /// 1 for the velocity loop, 2 for the position loop.
    pub stage: u8,
    /// Oscillation amplitude of the controlled signal (mm/s or mm).
    pub amplitude: f64,
    /// s
    pub tu: f64,
    /// Describing-function ultimate gain in drive units (Kv or Kp units).
    pub ku: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayOutcome {
    pub gains: GainVector,
    pub stages: Vec<RelayStage>,
    /// Always 1: the gains follow from one relay experiment per loop.
    pub iterations: usize,
}

impl RelayOutcome {
    /// Writes `stage,amplitude,Tu_s,Ku`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "stage,amplitude,Tu_s,Ku")?;
        for s in &self.stages {
            writeln!(w, "{},{},{},{}", s.stage, s.amplitude, s.tu, s.ku)?;
        }
        Ok(())
    }
}

/// Two-state relay with a switching band proportional to the last measured
/// amplitude. Tracks completed cycles between rising switches.
struct Relay {
    hysteresis: f64,
    state: f64,
    band: f64,
    last_rise: Option<usize>,
    lo: f64,
    hi: f64,
    /// (period in samples, amplitude)
    cycles: Vec<(usize, f64)>,
}

impl Relay {
    fn new(hysteresis: f64) -> Self {
        Relay {
            hysteresis,
            state: 1.0,
            band: 0.0,
            last_rise: None,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            cycles: Vec::new(),
        }
    }

    /// Feeds the error `e` (setpoint minus signal) and the signal `y` at
    /// sample `k`; returns the relay sign and whether a cycle just closed.
    fn update(&mut self, k: usize, e: f64, y: f64) -> (f64, bool) {
        self.lo = self.lo.min(y);
        self.hi = self.hi.max(y);
        let mut closed = false;
        if self.state < 0.0 && e > self.band {
            self.state = 1.0;
            if let Some(prev) = self.last_rise {
                let amp = 0.5 * (self.hi - self.lo);
                self.cycles.push((k - prev, amp));
                self.band = self.hysteresis * amp;
                closed = true;
            }
            self.last_rise = Some(k);
            self.lo = y;
            self.hi = y;
        } else if self.state > 0.0 && e < -self.band {
            self.state = -1.0;
        }
        (self.state, closed)
    }

    /// Mean amplitude and period [samples] over the last `n` cycles when they
    /// agree within `tol`.
    fn settled(&self, n: usize, tol: f64) -> Result<(f64, f64)> {
        let total = self.cycles.len();
        // the first cycles carry the start-up transient
        if total < n + 1 {
            return Err(Error::NoSustainedOscillation(format!(
                "only {total} complete cycles, need {}",
                n + 1
            )));
        }
        let last = &self.cycles[total - n..];
        let amp = last.iter().map(|c| c.1).sum::<f64>() / n as f64;
        let per = last.iter().map(|c| c.0 as f64).sum::<f64>() / n as f64;
        for &(p, a) in last {
            // periods are whole samples, allow one sample of jitter
            if (a - amp).abs() > tol * amp || (p as f64 - per).abs() > (tol * per).max(1.0) {
                return Err(Error::NoSustainedOscillation(format!(
                    "cycle (period {p} samples, amplitude {a:.4e}) departs from the mean \
                     (period {per:.2}, amplitude {amp:.4e})"
                )));
            }
        }
        if !(amp > 0.0 && amp.is_finite()) {
            return Err(Error::NoSustainedOscillation("zero oscillation amplitude".into()));
        }
        Ok((amp, per))
    }
}

/// Force relay around the open velocity loop, holding velocity near zero.
///
/// The relay output is centered on a bias that is reset to the mean force of
/// every completed cycle, which balances static loads such as the ripple
/// offset.
pub fn velocity_relay(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    cfg: &RelayConfig,
) -> Result<RelayStage> {
    let ts = profile.sample_time;
    let f_lim = plant.force_limit;
    let n = (cfg.duration / ts).ceil() as usize;
    let mut axis = Axis::new(plant, ts, profile.start_position, 0.0);
    let mut relay = Relay::new(cfg.hysteresis);
    let mut bias = 0.0;
    let (mut force_sum, mut force_n) = (0.0, 0usize);
    for k in 0..n {
        let v = axis.vel * 1e3;
        let (s, closed) = relay.update(k, -v, v);
        if closed {
            bias = force_sum / force_n as f64;
        }
        if relay.last_rise == Some(k) {
            force_sum = 0.0;
            force_n = 0;
        }
        let u = (bias + s * cfg.velocity_amplitude).clamp(-f_lim, f_lim);
        force_sum += u;
        force_n += 1;
        axis.step(u);
        if axis.blown() {
            return Err(Error::NoSustainedOscillation("velocity relay diverged".into()));
        }
    }
    let (amp_mm_s, per) = relay.settled(cfg.cycles_to_measure, cfg.settle_tolerance)?;
    let ku_si = 4.0 * cfg.velocity_amplitude / (PI * amp_mm_s * 1e-3);
    Ok(RelayStage {
        stage: 1,
        amplitude: amp_mm_s,
        tu: per * ts,
        ku: kv_from_si(ku_si),
    })
}

/// Velocity-command relay around the position loop with the velocity PI
/// closed at `kv`/`ti`.
pub fn position_relay(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    kv: f64,
    ti_ms: f64,
    cfg: &RelayConfig,
) -> Result<RelayStage> {
    let ts = profile.sample_time;
    let f_lim = plant.force_limit;
    let v_lim = plant.velocity_limit;
    let n = (cfg.duration / ts).ceil() as usize;
    let gains = GainVector { kp: 1.0, kv, ti: ti_ms };
    let (kv_si, ti) = (gains.kv_si(), gains.ti_si());
    let target = profile.start_position;
    let hold = (plant.ripple_sign * ripple_force(target, plant)).clamp(-f_lim, f_lim);
    let mut integ = hold * ti / kv_si;
    let mut axis = Axis::new(plant, ts, target, hold);
    let mut relay = Relay::new(cfg.hysteresis);
    for k in 0..n {
        let p = axis.position_mm();
        let (s, _) = relay.update(k, target - p, p);
        let v_cmd = (s * cfg.position_amplitude).clamp(-v_lim, v_lim) * 1e-3;
        let ev = v_cmd - axis.vel;
        let u_raw = kv_si * (ev + integ / ti);
        let u = u_raw.clamp(-f_lim, f_lim);
        if u_raw == u || ev * u_raw < 0.0 {
            integ += ev * ts;
        }
        axis.step(u);
        if axis.blown() || !integ.is_finite() {
            return Err(Error::NoSustainedOscillation("position relay diverged".into()));
        }
    }
    let (amp_mm, per) = relay.settled(cfg.cycles_to_measure, cfg.settle_tolerance)?;
    let ku_si = 4.0 * cfg.position_amplitude / (PI * amp_mm);
    Ok(RelayStage {
        stage: 2,
        amplitude: amp_mm,
        tu: per * ts,
        ku: kp_from_si(ku_si),
    })
}

/// Relay-feedback autotuning of the cascade: velocity loop first, then the
/// position loop with the freshly tuned velocity loop closed.
pub fn relay_tune(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    cfg: &RelayConfig,
) -> Result<RelayOutcome> {
    plant.validate()?;
    profile.validate()?;
    cfg.validate()?;
    let r = cfg.rules;
    let s1 = velocity_relay(plant, profile, cfg)?;
    let kv = r.kv_factor * s1.ku;
    let ti = r.ti_factor * s1.tu * 1e3;
    let s2 = position_relay(plant, profile, kv, ti, cfg)?;
    let gains = GainVector::new(r.kp_factor * s2.ku, kv, ti)?;
    Ok(RelayOutcome {
        gains,
        stages: vec![s1, s2],
        iterations: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;

    /// Rigid axis without ripple behind a transport delay of `delay` samples.
    fn first_order(delay: usize) -> PlantParams {
        PlantParams {
            force_delay_samples: delay,
            ..PlantParams::table1().without_ripple()
        }
    }

    fn ideal_relay() -> RelayConfig {
        RelayConfig {
            hysteresis: 0.0,
            ..Default::default()
        }
    }

    /// Period at which the sampled velocity path reaches -180 degrees, from
    /// its pulse transfer function.
    fn describing_function_period(p: &PlantParams, ts: f64) -> f64 {
        let beta = 1.0 - ts * p.damping / p.mass;
        let phase = |w: f64| {
            let z = Complex::from_polar(1.0, w * ts);
            let g = Complex::new(ts / p.mass, 0.0) / (z - beta);
            // the delay contributes -d*w*Ts without wrapping
            let arg = g.arg();
            let arg = if arg > 0.0 { arg - 2.0 * PI } else { arg };
            arg - p.force_delay_samples as f64 * w * ts
        };
        // first crossing of -180 degrees on a fine grid, then bisection
        let nyq = PI / ts;
        let grid = 20_000;
        let k = (1..=grid)
            .find(|&i| phase(nyq * i as f64 / grid as f64) <= -PI)
            .unwrap_or(grid);
        let (mut lo, mut hi) = (nyq * (k - 1) as f64 / grid as f64, nyq * k as f64 / grid as f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if phase(mid) > -PI {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        2.0 * PI / (0.5 * (lo + hi))
    }

    #[test]
    fn first_order_period_matches_describing_function() {
        let prof = ReferenceProfile::default();
        for delay in [4, 10, 20] {
            let p = first_order(delay);
            let s = velocity_relay(&p, &prof, &ideal_relay()).unwrap();
            let oracle = describing_function_period(&p, prof.sample_time);
            assert!((s.tu - oracle).abs() <= 0.1 * oracle, "{delay}: {} vs {oracle}", s.tu);
        }
    }

    #[test]
    fn ultimate_gain_does_not_depend_on_relay_amplitude() {
        let prof = ReferenceProfile::default();
        let plant = first_order(10);
        let cfg = ideal_relay();
        let doubled = RelayConfig {
            velocity_amplitude: 2.0 * cfg.velocity_amplitude,
            ..cfg.clone()
        };
        let a = velocity_relay(&plant, &prof, &cfg).unwrap();
        let b = velocity_relay(&plant, &prof, &doubled).unwrap();
        assert!((a.ku - b.ku).abs() <= 0.15 * a.ku, "{} vs {}", a.ku, b.ku);
    }

    #[test]
    fn table1_plant_gives_finite_gains() {
        let out = relay_tune(&PlantParams::table1(), &ReferenceProfile::default(), &RelayConfig::default())
            .unwrap();
        assert!(out.gains.validate().is_ok(), "{out:?}");
        assert_eq!(out.iterations, 1);
        assert_eq!(out.stages.len(), 2);
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("stage,amplitude,Tu_s,Ku\n1,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn velocity_stage_ignores_position_settings() {
        let plant = PlantParams::table1();
        let prof = ReferenceProfile::default();
        let a = velocity_relay(&plant, &prof, &RelayConfig::default()).unwrap();
        let b = velocity_relay(
            &plant,
            &prof,
            &RelayConfig {
                position_amplitude: 55.0,
                rules: RelayRules {
                    kp_factor: 0.1,
                    ..Default::default()
                },
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_short_an_experiment_has_no_sustained_cycle() {
        let cfg = RelayConfig {
            duration: 0.002,
            ..Default::default()
        };
        assert!(matches!(
            velocity_relay(&first_order(10), &ReferenceProfile::default(), &cfg),
            Err(Error::NoSustainedOscillation(_))
        ));
        let bad = RelayConfig {
            cycles_to_measure: 2,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().config_code(), Some("E_RELAY"));
    }
}
