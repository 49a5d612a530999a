//! Critical-gain detection by geometric gain ramps.
//!
//! Each run simulates one operation cycle and inspects the spectrum of the
//! position error while the axis dwells at the operation location. A gain is
//! declared critical as soon as the largest in-band spectral magnitude exceeds
//! the vibration threshold or the loop diverges.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{simulate_cycle, GainVector, NoiseModel, PlantParams, ReferenceProfile};
use crate::Bounds;

/// Shortest error segment a spectrum is computed for.
pub const MIN_SEGMENT: usize = 64;

/// Amplitude of the strongest in-band component of `segment` [mm].
///
/// The segment is mean-removed and Hann-windowed; magnitudes are scaled by
/// twice the inverse window sum so a sinusoid centered on a bin reports its
/// amplitude.
pub fn spectral_peak(segment: &[f64], sample_time: f64, window: (f64, f64)) -> Result<f64> {
    let n = segment.len();
    if n < MIN_SEGMENT {
        return Err(Error::SegmentTooShort {
            len: n,
            min: MIN_SEGMENT,
        });
    }
    let nyquist = 0.5 / sample_time;
    let (f_low, f_high) = window;
    if !(f_low >= 0.0 && f_low < f_high && f_high <= nyquist) {
        return Err(Error::config(
            "E_WINDOW",
            format!("window ({f_low}, {f_high}) Hz must satisfy 0 <= low < high <= {nyquist} Hz"),
        ));
    }
    let df = 1.0 / (n as f64 * sample_time);
    let k_low = (f_low / df).ceil() as usize;
    let k_high = ((f_high / df).floor() as usize).min(n / 2);
    if k_low > k_high {
        return Err(Error::WindowEmpty { f_low, f_high });
    }

    let mean = segment.iter().sum::<f64>() / n as f64;
    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let gain: f64 = hann.iter().sum();
    let mut buf: Vec<Complex<f64>> = segment
        .iter()
        .zip(&hann)
        .map(|(x, w)| Complex::new((x - mean) * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    Ok(buf[k_low..=k_high]
        .iter()
        .map(|c| 2.0 * c.norm() / gain)
        .fold(0.0, f64::max))
}

/// Units the vibration threshold is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumScale {
    /// Calibrated sinusoid amplitude [mm].
    Amplitude,
    /// Unnormalized DFT magnitude of the segment, i.e. amplitude times N/2.
    #[default]
    RawDft,
}

impl SpectrumScale {
    pub fn apply(&self, amplitude: f64, segment_len: usize) -> f64 {
        match self {
            SpectrumScale::Amplitude => amplitude,
            SpectrumScale::RawDft => amplitude * segment_len as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub start_gains: GainVector,
    pub step_factor: f64,
    /// Hz
    pub fft_window: (f64, f64),
    /// Spectral magnitude that counts as sustained vibration, in `scale` units.
    pub threshold: f64,
    pub scale: SpectrumScale,
    /// Runs per ramp, the shared nominal run included.
    pub max_steps: usize,
    pub margin: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            start_gains: GainVector::nominal(),
            step_factor: 1.1,
            fft_window: (50.0, 500.0),
            threshold: 0.4,
            scale: SpectrumScale::RawDft,
            max_steps: 30,
            margin: 0.75,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self, sample_time: f64) -> Result<()> {
        self.start_gains.validate()?;
        if !(self.step_factor > 1.0) || !self.step_factor.is_finite() {
            return Err(Error::config("E_SCAN", "step_factor must be a finite ratio above 1"));
        }
        let (lo, hi) = self.fft_window;
        let nyquist = 0.5 / sample_time;
        if !(lo >= 0.0 && lo < hi && hi <= nyquist) {
            return Err(Error::config(
                "E_WINDOW",
                format!("window ({lo}, {hi}) Hz must satisfy 0 <= low < high <= {nyquist} Hz"),
            ));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::config("E_SCAN", "threshold must be positive"));
        }
        if self.max_steps < 2 {
            return Err(Error::config("E_SCAN", "max_steps must be at least 2"));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::config("E_SCAN", "margin must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanPhase {
    Kv,
    Kp,
}

impl ScanPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanPhase::Kv => "kv",
            ScanPhase::Kp => "kp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanStep {
    pub phase: ScanPhase,
    pub gain: f64,
    /// Spectral magnitude compared against the threshold; infinite for
    /// diverged runs.
    pub peak_mm: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalGains {
    pub kp_crit: f64,
    pub kv_crit: f64,
    pub scan_log: Vec<ScanStep>,
    /// False when a ramp ran out of steps; the gains are then the last ones
    /// tried and only bound the critical values from below.
    pub kv_reached: bool,
    pub kp_reached: bool,
    pub simulations: usize,
}

impl CriticalGains {
    pub fn threshold_reached(&self) -> bool {
        self.kv_reached && self.kp_reached
    }

    /// `bounds` with the upper Kp/Kv limits pulled to `margin` times the
    /// critical gains.
    pub fn shrink(&self, bounds: &Bounds, margin: f64) -> Result<Bounds> {
        bounds.shrink_to_margin(self.kp_crit, self.kv_crit, margin)
    }

    /// Writes `phase,gain,peak_mm,exceeded`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "phase,gain,peak_mm,exceeded")?;
        for s in &self.scan_log {
            writeln!(w, "{},{},{},{}", s.phase.as_str(), s.gain, s.peak_mm, s.exceeded)?;
        }
        Ok(())
    }
}

/// Dwell-window spectral peak of one noise-free cycle in `scale` units,
/// infinite if the loop diverged.
pub fn dwell_peak(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    gains: &GainVector,
    window: (f64, f64),
    scale: SpectrumScale,
) -> Result<f64> {
    let trace = simulate_cycle(plant, gains, profile, &NoiseModel::off());
    if trace.diverged {
        return Ok(f64::INFINITY);
    }
    let seg = trace.dwell_error();
    let peak = scale.apply(spectral_peak(seg, trace.sample_time, window)?, seg.len());
    Ok(if peak.is_finite() { peak } else { f64::INFINITY })
}

/// Ramps Kv with Kp held at its start value, then Kp with Kv held at its
/// start value, stopping each ramp at the first run above the threshold.
///
/// The nominal run is shared by both ramps and counts as the first Kv step.
pub fn detect_critical_gains(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    cfg: &ScanConfig,
) -> Result<CriticalGains> {
    cfg.validate(profile.sample_time)?;
    let start = cfg.start_gains;
    let nominal_peak = dwell_peak(plant, profile, &start, cfg.fft_window, cfg.scale)?;
    if nominal_peak > cfg.threshold {
        return Err(Error::NominalUnstable {
            peak_mm: nominal_peak,
        });
    }
    let mut log = vec![ScanStep {
        phase: ScanPhase::Kv,
        gain: start.kv,
        peak_mm: nominal_peak,
        exceeded: false,
    }];
    let mut simulations = 1;

    let mut ramp = |phase: ScanPhase, log: &mut Vec<ScanStep>, steps: usize| -> Result<(f64, bool)> {
        let mut gain = match phase {
            ScanPhase::Kv => start.kv,
            ScanPhase::Kp => start.kp,
        };
        for _ in 0..steps {
            gain *= cfg.step_factor;
            let g = match phase {
                ScanPhase::Kv => GainVector { kv: gain, ..start },
                ScanPhase::Kp => GainVector { kp: gain, ..start },
            };
            let peak = dwell_peak(plant, profile, &g, cfg.fft_window, cfg.scale)?;
            simulations += 1;
            let exceeded = peak > cfg.threshold;
            log.push(ScanStep {
                phase,
                gain,
                peak_mm: peak,
                exceeded,
            });
            if exceeded {
                return Ok((gain, true));
            }
        }
        Ok((gain, false))
    };

    let (kv_crit, kv_reached) = ramp(ScanPhase::Kv, &mut log, cfg.max_steps - 1)?;
    let (kp_crit, kp_reached) = ramp(ScanPhase::Kp, &mut log, cfg.max_steps)?;
    if !(kv_reached && kp_reached) {
        log::warn!(
            "vibration threshold {} mm not reached within {} steps (kv: {kv_reached}, kp: {kp_reached})",
            cfg.threshold,
            cfg.max_steps
        );
    }
    Ok(CriticalGains {
        kp_crit,
        kv_crit,
        scan_log: log,
        kv_reached,
        kp_reached,
        simulations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TS: f64 = 0.5e-3;

    fn sine(amp: f64, freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * std::f64::consts::PI * freq * k as f64 * TS).sin())
            .collect()
    }

    #[test]
    fn in_band_sinusoid_reports_its_amplitude() {
        // 2000 samples at 0.5 ms put 200 Hz exactly on bin 200
        let p = spectral_peak(&sine(0.5, 200.0, 2000), TS, (50.0, 500.0)).unwrap();
        assert!((p - 0.5).abs() < 0.025, "{p}");
        // off-bin frequency loses at most the Hann scalloping
        let p = spectral_peak(&sine(0.5, 201.3, 2001), TS, (50.0, 500.0)).unwrap();
        assert!(p > 0.5 * 0.84 && p < 0.5 * 1.001, "{p}");
    }

    #[test]
    fn quiet_and_out_of_band_segments() {
        assert_eq!(spectral_peak(&vec![0.0; 2000], TS, (50.0, 500.0)).unwrap(), 0.0);
        let p = spectral_peak(&sine(0.5, 20.0, 2000), TS, (50.0, 500.0)).unwrap();
        assert!(p < 0.05, "{p}");
    }

    #[test]
    fn spectrum_input_errors() {
        assert!(matches!(
            spectral_peak(&[0.0; 10], TS, (50.0, 500.0)),
            Err(Error::SegmentTooShort { len: 10, .. })
        ));
        assert_eq!(
            spectral_peak(&[0.0; 100], TS, (50.0, 1500.0))
                .unwrap_err()
                .config_code(),
            Some("E_WINDOW")
        );
        // 100 samples give 20 Hz bins, none between 101 and 109 Hz
        assert!(matches!(
            spectral_peak(&[0.0; 100], TS, (101.0, 109.0)),
            Err(Error::WindowEmpty { .. })
        ));
    }

    proptest! {
        #[test]
        fn offset_does_not_change_the_peak(offset in -50.0f64..50.0, amp in 0.0f64..2.0) {
            let seg = sine(amp, 137.0, 512);
            let shifted: Vec<f64> = seg.iter().map(|x| x + offset).collect();
            let a = spectral_peak(&seg, TS, (50.0, 500.0)).unwrap();
            let b = spectral_peak(&shifted, TS, (50.0, 500.0)).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + offset.abs()));
        }
    }

    /// Plant variant with a one-sample force delay, whose critical gains sit
    /// within a few dozen ramp steps of nominal.
    fn delayed_plant() -> PlantParams {
        PlantParams {
            force_delay_samples: 1,
            ..PlantParams::table1()
        }
    }

    /// Smallest gain on a fine geometric grid at which the scan predicate
    /// fires, searched independently of the ramp.
    fn fine_onset(plant: &PlantParams, cfg: &ScanConfig, phase: ScanPhase, hi: f64) -> f64 {
        let profile = ReferenceProfile::default();
        let fires = |g: f64| {
            let gains = match phase {
                ScanPhase::Kv => GainVector { kv: g, ..cfg.start_gains },
                ScanPhase::Kp => GainVector { kp: g, ..cfg.start_gains },
            };
            dwell_peak(plant, &profile, &gains, cfg.fft_window, cfg.scale).unwrap() > cfg.threshold
        };
        let mut g = match phase {
            ScanPhase::Kv => cfg.start_gains.kv,
            ScanPhase::Kp => cfg.start_gains.kp,
        };
        while g < hi {
            if fires(g) {
                return g;
            }
            g *= 1.005;
        }
        f64::INFINITY
    }

    #[test]
    fn ramp_matches_fine_sweep_onset() {
        let plant = delayed_plant();
        let cfg = ScanConfig::default();
        let crit = detect_critical_gains(&plant, &ReferenceProfile::default(), &cfg).unwrap();
        assert!(crit.threshold_reached(), "{crit:?}");
        let kv_ref = fine_onset(&plant, &cfg, ScanPhase::Kv, 100.0);
        let kp_ref = fine_onset(&plant, &cfg, ScanPhase::Kp, 500.0);
        assert!(crit.kv_crit >= kv_ref && crit.kv_crit <= kv_ref * 1.1, "{} vs {kv_ref}", crit.kv_crit);
        assert!(crit.kp_crit >= kp_ref && crit.kp_crit <= kp_ref * 1.1, "{} vs {kp_ref}", crit.kp_crit);
        assert!(crit.kv_crit >= cfg.start_gains.kv && crit.kp_crit >= cfg.start_gains.kp);
        assert_eq!(crit.simulations, crit.scan_log.len());
        assert!(crit.simulations <= 2 * cfg.max_steps);
        // both ramps end on their first exceedance
        for phase in [ScanPhase::Kv, ScanPhase::Kp] {
            let steps: Vec<_> = crit.scan_log.iter().filter(|s| s.phase == phase).collect();
            assert!(steps.last().unwrap().exceeded);
            assert!(steps[..steps.len() - 1].iter().all(|s| !s.exceeded));
        }
        let shrunk = crit.shrink(&Bounds::table2(2), cfg.margin).unwrap();
        assert!(shrunk.contains(&[20.0, 1.0]));
    }

    #[test]
    fn unreachable_threshold_is_flagged() {
        let cfg = ScanConfig {
            threshold: f64::MAX,
            max_steps: 4,
            ..ScanConfig::default()
        };
        let crit = detect_critical_gains(&PlantParams::table1(), &ReferenceProfile::default(), &cfg)
            .unwrap();
        assert!(!crit.kv_reached && !crit.kp_reached);
        assert_eq!(crit.simulations, 8);
        assert!((crit.kv_crit - 1.1f64.powi(3)).abs() < 1e-12);
        assert!((crit.kp_crit - 20.0 * 1.1f64.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn more_damping_delays_the_onset() {
        let base = delayed_plant();
        let damped = PlantParams {
            damping: base.damping * 10.0,
            ..base.clone()
        };
        // the shift is a few percent, so ramp finely
        let cfg = ScanConfig {
            step_factor: 1.01,
            max_steps: 400,
            ..ScanConfig::default()
        };
        let profile = ReferenceProfile::default();
        let a = detect_critical_gains(&base, &profile, &cfg).unwrap();
        let b = detect_critical_gains(&damped, &profile, &cfg).unwrap();
        assert!(a.threshold_reached() && b.threshold_reached());
        assert!(b.kv_crit > a.kv_crit, "{} vs {}", b.kv_crit, a.kv_crit);
        assert!(b.kp_crit > a.kp_crit, "{} vs {}", b.kp_crit, a.kp_crit);
    }

    #[test]
    fn unstable_nominal_is_rejected() {
        let cfg = ScanConfig {
            start_gains: GainVector::with_fixed_ti(20.0, 40.0),
            ..ScanConfig::default()
        };
        assert!(matches!(
            detect_critical_gains(&delayed_plant(), &ReferenceProfile::default(), &cfg),
            Err(Error::NominalUnstable { .. })
        ));
    }

    #[test]
    fn raw_scale_is_half_the_segment_length() {
        assert_eq!(SpectrumScale::RawDft.apply(4e-4, 2000), 0.4);
        assert_eq!(SpectrumScale::Amplitude.apply(4e-4, 2000), 4e-4);
        // the raw magnitude of an on-bin sinusoid is the unwindowed DFT bin
        let seg = sine(1e-3, 200.0, 2000);
        let raw = SpectrumScale::RawDft.apply(spectral_peak(&seg, TS, (50.0, 500.0)).unwrap(), 2000);
        let (re, im) = seg.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, x)| {
            let ph = 2.0 * std::f64::consts::PI * 200.0 * k as f64 / 2000.0;
            (re + x * ph.cos(), im - x * ph.sin())
        });
        assert!((raw - re.hypot(im)).abs() < 0.05 * re.hypot(im), "{raw}");
    }

    #[test]
    fn csv_log_layout() {
        let crit = CriticalGains {
            kp_crit: 22.0,
            kv_crit: 1.1,
            scan_log: vec![ScanStep {
                phase: ScanPhase::Kp,
                gain: 22.0,
                peak_mm: 0.5,
                exceeded: true,
            }],
            kv_reached: true,
            kp_reached: true,
            simulations: 1,
        };
        let mut out = Vec::new();
        crit.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "phase,gain,peak_mm,exceeded\nkp,22,0.5,true\n");
    }
}
