use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{RelayConfig, SafeOptConfig};
use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::metrics::{CostWeights, CriticalPair};
use crate::scan::ScanConfig;
use crate::sim::{GainVector, NoiseModel, PlantParams, ReferenceProfile, FIXED_TI_MS};
use crate::tuner::TunerConfig;

/// Exhaustive-evaluation settings. Resolutions count points per axis,
/// endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// 2 fixes Ti at `fixed_ti`; 3 grids Ti too.
    pub dims: usize,
    pub resolution_2d: Vec<usize>,
    pub resolution_3d: Vec<usize>,
    /// Defaults to the grid-study box of the chosen dimension.
    pub bounds: Option<Bounds>,
    /// ms
    pub fixed_ti: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dims: 2,
            resolution_2d: vec![320, 300],
            resolution_3d: vec![61, 76, 25],
            bounds: None,
            fixed_ti: FIXED_TI_MS,
        }
    }
}

impl GridConfig {
    pub fn resolution(&self, dims: usize) -> &[usize] {
        if dims == 3 {
            &self.resolution_3d
        } else {
            &self.resolution_2d
        }
    }

    pub fn bounds_for(&self, dims: usize) -> Bounds {
        match &self.bounds {
            Some(b) if b.dims() == dims => b.clone(),
            _ => Bounds::table2(dims),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims) {
            return Err(Error::config("E_GRID", "grid dims must be 2 or 3"));
        }
        for (d, r) in [(2, &self.resolution_2d), (3, &self.resolution_3d)] {
            if r.len() != d || r.iter().any(|&n| n < 2) {
                return Err(Error::config(
                    "E_GRID",
                    format!("the {d}-D grid needs {d} resolutions of at least 2"),
                ));
            }
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        if !(self.fixed_ti > 0.0) {
            return Err(Error::config("E_GRID", "fixed_ti must be positive"));
        }
        Ok(())
    }
}

/// Settings only the table reproductions use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproduceConfig {
    /// Acquisition grids compared against the swarm, in (kp, kv, ti) points.
    pub appendix_grids: Vec<Vec<usize>>,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            appendix_grids: vec![vec![240, 75, 4], vec![480, 150, 8]],
        }
    }
}

/// One campaign file. Every section is optional; the campaign-level
/// `weights` apply to every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub study: String,
    pub plant: PlantParams,
    pub profile: ReferenceProfile,
    pub noise: NoiseModel,
    pub weights: CostWeights,
    pub tuner: TunerConfig,
    /// Runs the critical-gain scan before tuning when present.
    pub scan: Option<ScanConfig>,
    pub relay: RelayConfig,
    pub safeopt: SafeOptConfig,
    pub grid: GridConfig,
    pub reproduce: ReproduceConfig,
    /// Gains for the `simulate` command.
    pub gains: GainVector,
    pub output_dir: PathBuf,
    pub repetitions: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            study: "campaign".into(),
            plant: PlantParams::table1(),
            profile: ReferenceProfile::default(),
            noise: NoiseModel::default(),
            weights: CostWeights::default(),
            tuner: TunerConfig::default(),
            scan: None,
            relay: RelayConfig::default(),
            safeopt: SafeOptConfig::default(),
            grid: GridConfig::default(),
            reproduce: ReproduceConfig::default(),
            gains: GainVector::nominal(),
            output_dir: PathBuf::from("out"),
            repetitions: 10,
            base_seed: 0,
            workers: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("E_CONFIG", e.to_string()))
    }

    /// Weights as validated: a configured scan will supply the critical
    /// gains, so a placeholder pair stands in for them.
    fn weights_for_validation(&self) -> CostWeights {
        let mut w = self.weights.clone();
        if self.scan.is_some() && w.critical_gains.is_none() {
            w.critical_gains = Some(CriticalPair {
                kp_crit: 1.0,
                kv_crit: 1.0,
            });
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.profile.validate()?;
        let w = self.weights_for_validation();
        w.validate()?;
        TunerConfig {
            weights: w.clone(),
            ..self.tuner.clone()
        }
        .validate()?;
        if let Some(s) = &self.scan {
            s.validate(self.profile.sample_time)?;
        }
        self.relay.validate()?;
        SafeOptConfig {
            weights: w,
            ..self.safeopt.clone()
        }
        .validate()?;
        self.grid.validate()?;
        if self
            .reproduce
            .appendix_grids
            .iter()
            .any(|g| g.len() != 3 || g.iter().any(|&n| n < 2))
        {
            return Err(Error::config("E_GRID", "appendix grids need three resolutions of at least 2"));
        }
        self.gains.validate()?;
        if self.repetitions < 1 {
            return Err(Error::config("E_CAMPAIGN", "repetitions must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("E_CAMPAIGN", "workers must be at least 1"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn tuner_for(&self, weights: &CostWeights, seed: u64) -> TunerConfig {
        TunerConfig {
            weights: weights.clone(),
            seed,
            ..self.tuner.clone()
        }
    }

    pub fn safeopt_for(&self, weights: &CostWeights, seed: u64) -> SafeOptConfig {
        SafeOptConfig {
            weights: weights.clone(),
            seed,
            ..self.safeopt.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(text: &str) -> Option<&'static str> {
        CampaignConfig::from_toml(text).unwrap_err().config_code()
    }

    #[test]
    fn minimal_file_uses_the_defaults() {
        let c = CampaignConfig::from_toml("study = \"toy\"\n").unwrap();
        assert_eq!(c.study, "toy");
        assert_eq!(c.plant, PlantParams::table1());
        assert_eq!(c.repetitions, 10);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = CampaignConfig::default();
        let back = CampaignConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn each_rejection_has_its_own_code() {
        assert_eq!(code("[tuner.bounds]\nlower = [-1.0, 0.5]\nupper = [70.0, 8.0]\n"), Some("E_BOUNDS"));
        assert_eq!(code("[weights]\nw = [0.25, 0.25, 0.25, 0.25]\n"), Some("E_CRIT"));
        assert_eq!(code("[scan]\nfft_window = [50.0, 1500.0]\n"), Some("E_WINDOW"));
        assert_eq!(code("repetitions = 0\n"), Some("E_CAMPAIGN"));
    }

    #[test]
    fn a_scan_supplies_the_critical_gains() {
        CampaignConfig::from_toml("[weights]\nw = [0.25, 0.25, 0.25, 0.25]\n[scan]\n").unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(CampaignConfig::from_toml("studdy = 1\n"), Err(Error::Toml(_))));
    }
}
