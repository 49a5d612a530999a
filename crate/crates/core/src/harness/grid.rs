use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_candidate, write_metrics_csv, CostWeights, Observation};
use crate::sim::{GainVector, NoiseModel, PlantParams, ReferenceProfile};

/// Exhaustive evaluation of a gain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStudy {
    pub bounds: Bounds,
    pub resolution: Vec<usize>,
    /// Ti used when only Kp and Kv are gridded [ms].
    pub fixed_ti: f64,
    /// Row-major over (kp, kv[, ti]).
    pub cells: Vec<Observation>,
    /// Lowest-cost feasible cell, lowest-cost cell when none is feasible.
    pub argmin: usize,
    pub argmin_feasible: bool,
}

/// Compact result of a grid study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub bounds: Bounds,
    pub resolution: Vec<usize>,
    pub cells: usize,
    pub gains: GainVector,
    pub cost: f64,
    pub constraint: f64,
    pub feasible: bool,
}

impl GridStudy {
    pub fn best(&self) -> &Observation {
        &self.cells[self.argmin]
    }

    pub fn optimum(&self) -> GridOptimum {
        let b = self.best();
        GridOptimum {
            bounds: self.bounds.clone(),
            resolution: self.resolution.clone(),
            cells: self.cells.len(),
            gains: b.x,
            cost: b.y,
            constraint: b.z,
            feasible: self.argmin_feasible,
        }
    }

    /// Cost surface in the metrics layout.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_metrics_csv(&self.cells, w)
    }
}

/// Evenly spaced axis values, endpoints included.
pub fn grid_axes(bounds: &Bounds, resolution: &[usize]) -> Vec<Vec<f64>> {
    resolution
        .iter()
        .enumerate()
        .map(|(d, &n)| {
            (0..n)
                .map(|i| bounds.lower[d] + bounds.width(d) * i as f64 / (n - 1) as f64)
                .collect()
        })
        .collect()
}

/// Grids `bounds` with an arbitrary oracle. Cells are evaluated in parallel
/// and stored in grid order.
pub fn run_grid_with<F>(
    bounds: &Bounds,
    resolution: &[usize],
    fixed_ti: f64,
    constraint_bound: f64,
    oracle: F,
) -> Result<GridStudy>
where
    F: Fn(&GainVector) -> Result<Observation> + Sync,
{
    bounds.validate()?;
    if resolution.len() != bounds.dims() || resolution.iter().any(|&n| n < 2) {
        return Err(Error::config(
            "E_GRID",
            "grid resolution needs one entry >= 2 per dimension",
        ));
    }
    let axes = grid_axes(bounds, resolution);
    let total: usize = resolution.iter().product();
    let gains_at = |mut idx: usize| {
        let mut x = vec![0.0; resolution.len()];
        for d in (0..resolution.len()).rev() {
            x[d] = axes[d][idx % resolution[d]];
            idx /= resolution[d];
        }
        GainVector {
            kp: x[0],
            kv: x[1],
            ti: x.get(2).copied().unwrap_or(fixed_ti),
        }
    };
    let cells = (0..total)
        .into_par_iter()
        .map(|i| oracle(&gains_at(i)))
        .collect::<Result<Vec<_>>>()?;

    let rank = |o: &Observation| if o.y.is_finite() { o.y } else { f64::INFINITY };
    let pick = |feasible_only: bool| {
        cells
            .iter()
            .enumerate()
            .filter(|(_, o)| !feasible_only || (!o.diverged && o.z <= constraint_bound))
            .min_by(|a, b| rank(a.1).total_cmp(&rank(b.1)).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    };
    let (argmin, argmin_feasible) = match pick(true) {
        Some(i) => (i, true),
        None => (pick(false).expect("grid has cells"), false),
    };
    Ok(GridStudy {
        bounds: bounds.clone(),
        resolution: resolution.to_vec(),
        fixed_ti,
        cells,
        argmin,
        argmin_feasible,
    })
}

/// Noise-free exhaustive evaluation on the simulated axis.
pub fn run_grid(
    plant: &PlantParams,
    profile: &ReferenceProfile,
    weights: &CostWeights,
    bounds: &Bounds,
    resolution: &[usize],
    fixed_ti: f64,
) -> Result<GridStudy> {
    plant.validate()?;
    profile.validate()?;
    weights.validate()?;
    run_grid_with(bounds, resolution, fixed_ti, weights.constraint_bound, |g| {
        evaluate_candidate(g, plant, profile, weights, &NoiseModel::off())
    })
}
