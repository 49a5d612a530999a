use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use super::io::{write_rows, CompareRow};
use super::stats::{summarize, Summary};
use crate::acquisition::{feasible_best, write_surface_csv, AcquisitionContext};
use crate::baselines::{relay_tune, safeopt_tune, RelayOutcome, RelayStage};
use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_candidate, CostWeights, CriticalPair};
use crate::scan::{detect_critical_gains, CriticalGains};
use crate::sim::{GainVector, NoiseModel};
use crate::tuner::{subseed, tune, TuneReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cbo,
    Safeopt,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cbo => "cbo",
            Method::Safeopt => "safeopt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub study: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub bounds: Bounds,
    pub critical_gains: Option<CriticalPair>,
    pub final_cost: Summary,
    /// Experiments per repetition, initial design included.
    pub iterations: Summary,
    pub violations: Summary,
    pub best_gains: Vec<GainVector>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub reports: Vec<TuneReport>,
    pub summary: CampaignSummary,
    pub scan: Option<CriticalGains>,
    /// Weights after the scan filled in the critical gains.
    pub weights: CostWeights,
}

/// Result of one relay-feedback tuning run, scored like the other methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayReport {
    pub gains: GainVector,
    pub stages: Vec<RelayStage>,
    pub iterations: usize,
    pub final_cost: f64,
    pub constraint: f64,
    pub violations: usize,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Runs the optional critical-gain scan and returns the weights every
/// method should use. Writes `scan.csv` and `critical_gains.json` into `out`.
pub fn prepare_weights(
    cfg: &CampaignConfig,
    out: Option<&Path>,
) -> Result<(CostWeights, Option<CriticalGains>)> {
    let mut weights = cfg.weights.clone();
    let Some(scan_cfg) = &cfg.scan else {
        return Ok((weights, None));
    };
    let crit = detect_critical_gains(&cfg.plant, &cfg.profile, scan_cfg)?;
    if let Some(dir) = out {
        crit.write_csv(BufWriter::new(File::create(dir.join("scan.csv"))?))?;
        write_json(&dir.join("critical_gains.json"), &crit)?;
    }
    if crit.threshold_reached() {
        weights.critical_gains = Some(CriticalPair {
            kp_crit: crit.kp_crit,
            kv_crit: crit.kv_crit,
        });
    } else {
        warn!("the scan did not reach the vibration threshold; no critical gains");
        if weights.w[3] > 0.0 && weights.critical_gains.is_none() {
            return Err(Error::MissingCriticalGains);
        }
    }
    Ok((weights, Some(crit)))
}

fn noise_for(cfg: &CampaignConfig, seed: u64) -> NoiseModel {
    cfg.noise.with_seed(subseed(cfg.noise.seed ^ seed, 7))
}

/// One repetition of `method` with the campaign noise stream for `seed`.
pub fn run_method(cfg: &CampaignConfig, weights: &CostWeights, method: Method, seed: u64) -> Result<TuneReport> {
    let noise = noise_for(cfg, seed);
    match method {
        Method::Cbo => tune(&cfg.plant, &cfg.profile, &noise, &cfg.tuner_for(weights, seed)),
        Method::Safeopt => safeopt_tune(&cfg.plant, &cfg.profile, &noise, &cfg.safeopt_for(weights, seed)),
    }
}

pub(crate) fn write_report(report: &TuneReport, out: &Path) -> Result<()> {
    let stem = format!("{}_seed{}", report.method, report.seed);
    fs::write(out.join(format!("{stem}.json")), report.to_json()? + "\n")?;
    report.write_csv(BufWriter::new(File::create(out.join(format!("{stem}.csv")))?))
}

/// Runs every seed, writing each report as soon as it finishes. On failure
/// the finished reports stay on disk and the first error is returned.
fn run_seeds(cfg: &CampaignConfig, weights: &CostWeights, method: Method, out: &Path) -> Result<Vec<TuneReport>> {
    cfg.seeds()
        .into_par_iter()
        .map(|seed| {
            let r = run_method(cfg, weights, method, seed)?;
            write_report(&r, out)?;
            info!("{} seed {seed}: final cost {:.4e}", method.as_str(), r.final_cost);
            Ok(r)
        })
        .collect::<Vec<Result<TuneReport>>>()
        .into_iter()
        .collect()
}

pub fn summarize_reports(
    study: &str,
    method: &str,
    reports: &[TuneReport],
    critical_gains: Option<CriticalPair>,
    seed: u64,
) -> CampaignSummary {
    let col = |f: &dyn Fn(&TuneReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    CampaignSummary {
        study: study.into(),
        method: method.into(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        bounds: reports[0].bounds.clone(),
        critical_gains,
        final_cost: summarize(&col(&|r| r.final_cost), seed),
        iterations: summarize(&col(&|r| r.iteration_of_stop as f64), seed),
        violations: summarize(&col(&|r| r.violations as f64), seed),
        best_gains: reports.iter().map(|r| GainVector::from_slice(&r.best.x)).collect(),
    }
}

/// Scan, bound shrink, repetitions and summary for one method. Artifacts:
/// `<method>_seed<s>.json|csv` per repetition and `summary_<method>.json`.
pub fn run_campaign(cfg: &CampaignConfig, method: Method, out: &Path) -> Result<CampaignOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let (weights, scan) = prepare_weights(cfg, Some(out))?;
    let reports = run_seeds(cfg, &weights, method, out)?;
    let summary = summarize_reports(&cfg.study, method.as_str(), &reports, weights.critical_gains, cfg.base_seed);
    write_json(&out.join(format!("summary_{}.json", method.as_str())), &summary)?;
    Ok(CampaignOutcome {
        reports,
        summary,
        scan,
        weights,
    })
}

/// Writes the final GP models of a report and the CEI surface they imply:
/// `gp_cost.json`, `gp_constraint.json`, `acquisition.csv`.
pub fn write_model_artifacts(report: &TuneReport, weights: &CostWeights, out: &Path) -> Result<()> {
    let (f, g) = report.final_models()?;
    write_json(&out.join("gp_cost.json"), &f.dump())?;
    write_json(&out.join("gp_constraint.json"), &g.dump())?;
    let d = report.observations();
    let ctx = AcquisitionContext {
        cost_model: &f,
        constraint_model: &g,
        best_observed: feasible_best(&d.cost_targets, &d.constraint_targets, weights.constraint_bound),
        threshold: weights.constraint_bound,
        bounds: &report.bounds,
    };
    write_surface_csv(&ctx, 61, 61, None, BufWriter::new(File::create(out.join("acquisition.csv"))?))
}

/// Relay tuning scored with the campaign's noise-free oracle.
pub fn relay_report(cfg: &CampaignConfig, weights: &CostWeights) -> Result<RelayReport> {
    let r = relay_tune(&cfg.plant, &cfg.profile, &cfg.relay)?;
    let o = evaluate_candidate(&r.gains, &cfg.plant, &cfg.profile, weights, &NoiseModel::off())?;
    Ok(RelayReport {
        gains: r.gains,
        stages: r.stages,
        iterations: r.iterations,
        final_cost: o.y,
        constraint: o.z,
        violations: usize::from(o.diverged || o.z > weights.constraint_bound),
    })
}

pub fn write_relay(report: &RelayReport, out: &Path) -> Result<()> {
    write_json(&out.join("relay.json"), report)?;
    RelayOutcome {
        gains: report.gains,
        stages: report.stages.clone(),
        iterations: report.iterations,
    }
    .write_csv(BufWriter::new(File::create(out.join("relay.csv"))?))
}

/// CBO, relay and SafeOpt on the same seeds. Writes every report,
/// `compare.csv` (one row per method and seed) and `compare_summary.json`.
pub fn run_compare(cfg: &CampaignConfig, out: &Path) -> Result<Vec<CompareRow>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let (weights, _) = prepare_weights(cfg, Some(out))?;
    let relay = relay_report(cfg, &weights)?;
    write_relay(&relay, out)?;
    let cbo = run_seeds(cfg, &weights, Method::Cbo, out)?;
    let safeopt = run_seeds(cfg, &weights, Method::Safeopt, out)?;

    let row = |r: &TuneReport| CompareRow {
        method: r.method.clone(),
        seed: r.seed,
        final_cost: r.final_cost,
        iterations: r.iteration_of_stop,
        violations: r.violations,
    };
    let mut rows: Vec<CompareRow> = cbo.iter().map(row).collect();
    rows.extend(cfg.seeds().into_iter().map(|seed| CompareRow {
        method: "relay".into(),
        seed,
        final_cost: relay.final_cost,
        iterations: relay.iterations,
        violations: relay.violations,
    }));
    rows.extend(safeopt.iter().map(row));
    write_rows(&rows, BufWriter::new(File::create(out.join("compare.csv"))?))?;

    let summaries: Vec<CampaignSummary> = [("cbo", &cbo), ("safeopt", &safeopt)]
        .into_iter()
        .map(|(m, r)| summarize_reports(&cfg.study, m, r, weights.critical_gains, cfg.base_seed))
        .collect();
    write_json(&out.join("compare_summary.json"), &summaries)?;
    Ok(rows)
}
