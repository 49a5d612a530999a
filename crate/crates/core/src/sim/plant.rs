use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-axis plant: damped single mass plus position-periodic force ripple
/// and cogging.
///
/// `ripple_coeffs` holds `c1..c(2n+3)`: offset [N], gradient [N/m], magnet
/// pitch [m], then an (amplitude [N], phase) pair per harmonic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// kg
    pub mass: f64,
    /// kg/s
    pub damping: f64,
    pub ripple_coeffs: Vec<f64>,
    pub n_harmonics: usize,
    /// N
    pub coulomb_friction: f64,
    /// mm/s
    pub velocity_limit: f64,
    /// N
    pub force_limit: f64,
    /// +1 subtracts the ripple from the motor force, -1 adds it.
    pub ripple_sign: f64,
    /// First-order lag of the inner current loop [s]. `None` is unity gain.
    pub current_lag: Option<f64>,
    /// Whole-sample transport delay between force command and motor force.
    pub force_delay_samples: usize,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams::table1()
    }
}

/// Rated motor force the 400% limit is applied to [N].
pub const RATED_FORCE: f64 = 500.0;

impl PlantParams {
    /// Identified parameters of the grinding-machine X axis.
    pub fn table1() -> Self {
        PlantParams {
            mass: 388.61,
            damping: 2224.60,
            ripple_coeffs: vec![-104.9, 682.44, 2.364e-1, 23.55, 8.77e-7],
            n_harmonics: 1,
            coulomb_friction: 0.0,
            velocity_limit: 315.0,
            force_limit: 4.0 * RATED_FORCE,
            ripple_sign: 1.0,
            current_lag: None,
            force_delay_samples: 0,
        }
    }

    /// Same plant with every ripple/cogging coefficient except the pitch zeroed.
    pub fn without_ripple(&self) -> Self {
        let mut p = self.clone();
        for (i, c) in p.ripple_coeffs.iter_mut().enumerate() {
            if i != 2 {
                *c = 0.0;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("E_PLANT", m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(self.damping >= 0.0) {
            return bad("damping must be non-negative");
        }
        if self.n_harmonics < 1 {
            return bad("at least one ripple harmonic is required");
        }
        if self.ripple_coeffs.len() != 2 * self.n_harmonics + 3 {
            return bad("ripple_coeffs must have 2*n_harmonics+3 entries");
        }
        if !(self.ripple_coeffs[2] > 0.0) {
            return bad("ripple period c3 must be positive");
        }
        if !(self.velocity_limit > 0.0) || !(self.force_limit > 0.0) {
            return bad("velocity and force limits must be positive");
        }
        if self.coulomb_friction < 0.0 {
            return bad("coulomb friction must be non-negative");
        }
        if let Some(tau) = self.current_lag {
            if !(tau > 0.0) {
                return bad("current-loop lag must be positive when set");
            }
        }
        Ok(())
    }

    pub fn ripple_force(&self, position_mm: f64) -> f64 {
        ripple_force(position_mm, self)
    }
}

/// Truncated Fourier model of force ripple and cogging at `position_mm`.
///
/// The position is converted to meters before evaluation, matching the units
/// of `c2` and `c3`.
pub fn ripple_force(position_mm: f64, params: &PlantParams) -> f64 {
    let c = &params.ripple_coeffs;
    let p = position_mm * 1e-3;
    let mut f = c[0] + c[1] * p;
    let base = 2.0 * std::f64::consts::PI * p / c[2];
    for k in 1..=params.n_harmonics {
        let amp = c[2 * k + 1];
        let phase = c[2 * k + 2];
        f += amp * (k as f64 * base + phase).sin();
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table1_at_origin() {
        let p = PlantParams::table1();
        // c1 + c4 * sin(c5); sin(8.77e-7) ~ 8.77e-7
        let expected = -104.9 + 23.55 * 8.77e-7;
        assert_relative_eq!(ripple_force(0.0, &p), expected, epsilon = 1e-12);
        assert_relative_eq!(ripple_force(0.0, &p), -104.89998, epsilon = 1e-5);
    }

    #[test]
    fn one_period_shift_leaves_only_gradient() {
        let p = PlantParams::table1();
        let c3_mm = p.ripple_coeffs[2] * 1e3;
        for &x in &[-50.0, 0.0, 13.7, 120.0] {
            let d = ripple_force(x + c3_mm, &p) - ripple_force(x, &p);
            assert_relative_eq!(d, 682.44 * 0.2364, epsilon = 1e-9);
        }
        assert_relative_eq!(682.44 * 0.2364, 161.33, epsilon = 5e-3);
    }

    #[test]
    fn offset_only_is_constant() {
        let mut p = PlantParams::table1();
        p.ripple_coeffs[1] = 0.0;
        p.ripple_coeffs[3] = 0.0;
        for &x in &[0.0, 10.0, 77.7, -300.0] {
            assert_eq!(ripple_force(x, &p), -104.9);
        }
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut p = PlantParams::table1();
        p.ripple_coeffs.push(1.0);
        assert!(p.validate().is_err());
        let mut p = PlantParams::table1();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = PlantParams::table1();
        p.ripple_coeffs[2] = 0.0;
        assert!(p.validate().is_err());
        assert!(PlantParams::table1().validate().is_ok());
    }
}
