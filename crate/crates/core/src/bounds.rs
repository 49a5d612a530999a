use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned admissible box over the tuned gains, in drive units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Bounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// The grid-study box: Kp 10..70, Kv 0.5..8 and, in 3-D, Ti 5..17 ms.
    pub fn table2(dims: usize) -> Self {
        match dims {
            2 => Bounds {
                lower: vec![10.0, 0.5],
                upper: vec![70.0, 8.0],
            },
            _ => Bounds {
                lower: vec![10.0, 0.5, 5.0],
                upper: vec![70.0, 8.0, 17.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || !(2..=3).contains(&self.lower.len()) {
            return Err(Error::config("E_BOUNDS", "bounds need 2 or 3 matching dimensions"));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !(l.is_finite() && u.is_finite() && *l > 0.0 && u > l) {
                return Err(Error::config(
                    "E_BOUNDS",
                    format!("bounds must be positive with lower < upper, got [{l}, {u}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| (v - self.lower[d]) / self.width(d))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(d, v)| self.lower[d] + v * self.width(d))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lower[d] && *v <= self.upper[d])
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }

    /// Euclidean length of the box diagonal in drive units.
    pub fn diagonal(&self) -> f64 {
        (0..self.dims()).map(|d| self.width(d).powi(2)).sum::<f64>().sqrt()
    }

    /// Shrinks the Kp/Kv upper limits to `margin` times the critical gains.
    pub fn shrink_to_margin(&self, kp_crit: f64, kv_crit: f64, margin: f64) -> Result<Self> {
        let mut b = self.clone();
        b.upper[0] = b.upper[0].min(margin * kp_crit);
        b.upper[1] = b.upper[1].min(margin * kv_crit);
        b.validate().map_err(|_| {
            Error::config(
                "E_BOUNDS",
                format!(
                    "critical gains ({kp_crit:.3}, {kv_crit:.3}) with margin {margin} leave an empty box"
                ),
            )
        })?;
        Ok(b)
    }
}
