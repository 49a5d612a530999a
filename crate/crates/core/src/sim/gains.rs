use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integral time used when only `(Kp, Kv)` are tuned [ms].
pub const FIXED_TI_MS: f64 = 7.5;

/// Controller parameters in drive units.
///
/// * `kp`: position P gain [1000/min], i.e. (m/min) of velocity per mm of error
/// * `kv`: velocity PI gain [N/(mm/min)]
/// * `ti`: integral time [ms]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub kp: f64,
    pub kv: f64,
    pub ti: f64,
}

impl GainVector {
    pub fn new(kp: f64, kv: f64, ti: f64) -> Result<Self> {
        let g = GainVector { kp, kv, ti };
        g.validate()?;
        Ok(g)
    }

    /// Two-parameter mode with `Ti` pinned to 7.5 ms.
    pub fn with_fixed_ti(kp: f64, kv: f64) -> Self {
        GainVector {
            kp,
            kv,
            ti: FIXED_TI_MS,
        }
    }

    /// Factory settings of the X axis.
    pub fn nominal() -> Self {
        GainVector::with_fixed_ti(20.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.kp) && ok(self.kv) && ok(self.ti) {
            Ok(())
        } else {
            Err(Error::config(
                "E_GAINS",
                format!("gains must be finite and positive, got {self:?}"),
            ))
        }
    }

    /// Position gain in 1/s.
    pub fn kp_si(&self) -> f64 {
        self.kp * 1000.0 / 60.0
    }

    /// Velocity gain in N/(m/s).
    pub fn kv_si(&self) -> f64 {
        self.kv * 60.0 * 1000.0
    }

    /// Integral time in s.
    pub fn ti_si(&self) -> f64 {
        self.ti * 1e-3
    }

    /// Builds gains from a tuned vector of length 2 `(kp, kv)` or 3 `(kp, kv, ti)`.
    pub fn from_slice(x: &[f64]) -> Self {
        match x.len() {
            2 => GainVector::with_fixed_ti(x[0], x[1]),
            3 => GainVector {
                kp: x[0],
                kv: x[1],
                ti: x[2],
            },
            n => panic!("gain vectors have 2 or 3 components, got {n}"),
        }
    }

    pub fn to_vec(&self, dims: usize) -> Vec<f64> {
        match dims {
            2 => vec![self.kp, self.kv],
            _ => vec![self.kp, self.kv, self.ti],
        }
    }
}

/// Converts SI gains back to drive units.
pub fn kp_from_si(kp_per_s: f64) -> f64 {
    kp_per_s * 60.0 / 1000.0
}

pub fn kv_from_si(kv_n_per_m_s: f64) -> f64 {
    kv_n_per_m_s / 60_000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_round_trip() {
        let g = GainVector::new(45.5, 5.9, 12.5).unwrap();
        assert!((kp_from_si(g.kp_si()) - 45.5).abs() < 1e-12);
        assert!((kv_from_si(g.kv_si()) - 5.9).abs() < 1e-12);
        assert!((g.ti_si() - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(GainVector::new(0.0, 1.0, 7.5).is_err());
        assert!(GainVector::new(1.0, -1.0, 7.5).is_err());
        assert!(GainVector::new(1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn slice_modes() {
        assert_eq!(GainVector::from_slice(&[20.0, 1.0]), GainVector::nominal());
        let g = GainVector::from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(g.to_vec(3), vec![1.0, 2.0, 3.0]);
        assert_eq!(g.to_vec(2), vec![1.0, 2.0]);
    }
}
