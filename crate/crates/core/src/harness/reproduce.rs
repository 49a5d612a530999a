use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use super::campaign::{prepare_weights, relay_report, run_method, summarize_reports, write_json, write_relay, write_report, Method};
use super::config::CampaignConfig;
use super::grid::run_grid;
use super::stats::{median, Summary};
use crate::baselines::HyperMode;
use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::metrics::CostWeights;
use crate::sim::GainVector;
use crate::tuner::{AcquisitionOptimizer, TuneReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Table2,
    Table3,
    Table4,
    PsoAppendix,
}

impl Table {
    pub fn as_str(&self) -> &'static str {
        match self {
            Table::Table2 => "table2",
            Table::Table3 => "table3",
            Table::Table4 => "table4",
            Table::PsoAppendix => "pso-appendix",
        }
    }
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Table::Table2),
            "table3" => Ok(Table::Table3),
            "table4" => Ok(Table::Table4),
            "pso-appendix" => Ok(Table::PsoAppendix),
            _ => Err(Error::config(
                "E_TABLE",
                format!("unknown table `{s}` (table2, table3, table4, pso-appendix)"),
            )),
        }
    }
}

fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

/// `mean ± half-width` of the bootstrap interval of the mean.
fn mean_pm(s: &Summary, fmt: fn(f64) -> String) -> String {
    let h = 0.5 * (s.mean_interval[1] - s.mean_interval[0]);
    format!("{} ± {}", fmt(s.mean), fmt(h))
}

fn fixed2(v: f64) -> String {
    format!("{v:.2}")
}

struct Timed {
    report: TuneReport,
    seconds: f64,
}

fn run_timed(cfg: &CampaignConfig, weights: &CostWeights, method: Method, out: &Path) -> Result<Vec<Timed>> {
    cfg.seeds()
        .into_par_iter()
        .map(|seed| {
            let t0 = Instant::now();
            let report = run_method(cfg, weights, method, seed)?;
            let seconds = t0.elapsed().as_secs_f64();
            write_report(&report, out)?;
            Ok(Timed { report, seconds })
        })
        .collect::<Vec<Result<Timed>>>()
        .into_iter()
        .collect()
}

fn reports(t: &[Timed]) -> Vec<TuneReport> {
    t.iter().map(|t| t.report.clone()).collect()
}

fn with_bounds(cfg: &CampaignConfig, dims: usize) -> CampaignConfig {
    let mut c = cfg.clone();
    if c.tuner.bounds.dims() != dims {
        c.tuner.bounds = Bounds::table2(dims);
    }
    c
}

/// Runs the study behind `table` and writes `<table>.md` plus the underlying
/// artifacts into `out/<table>/`. Returns the markdown.
pub fn reproduce(table: Table, cfg: &CampaignConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    let dir = out.join(table.as_str());
    fs::create_dir_all(&dir)?;
    let md = match table {
        Table::Table2 => table2(cfg, &dir)?,
        Table::Table3 => table3(cfg, &dir)?,
        Table::Table4 => table4(cfg, &dir)?,
        Table::PsoAppendix => pso_appendix(cfg, &dir)?,
    };
    fs::write(out.join(format!("{}.md", table.as_str())), &md)?;
    Ok(md)
}

fn table2(cfg: &CampaignConfig, dir: &Path) -> Result<String> {
    let mut opt = Vec::new();
    for dims in [2, 3] {
        let bounds = cfg.grid.bounds_for(dims);
        let g = run_grid(&cfg.plant, &cfg.profile, &cfg.weights, &bounds, cfg.grid.resolution(dims), cfg.grid.fixed_ti)?;
        g.write_csv(BufWriter::new(File::create(dir.join(format!("grid{dims}d.csv")))?))?;
        write_json(&dir.join(format!("grid{dims}d_optimum.json")), &g.optimum())?;
        opt.push(g.optimum());
    }
    let (a, b) = (&opt[0], &opt[1]);
    let range = |d: usize| format!("{} – {}", b.bounds.lower[d], b.bounds.upper[d]);
    let mut md = String::new();
    writeln!(md, "# Global optima of the exhaustive evaluation\n").unwrap();
    writeln!(
        md,
        "Grids: 2-D {:?} with Ti = {} ms, 3-D {:?}.\n",
        a.resolution, cfg.grid.fixed_ti, b.resolution
    )
    .unwrap();
    writeln!(md, "| Parameter | 2-D optimum | 2-D (paper) | 3-D optimum | 3-D (paper) | Range |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|").unwrap();
    writeln!(md, "| Kp [1000/min] | {:.2} | 45.5 | {:.2} | 57 | {} |", a.gains.kp, b.gains.kp, range(0)).unwrap();
    writeln!(md, "| Kv [N/(mm/min)] | {:.3} | 5.9 | {:.3} | 6.85 | {} |", a.gains.kv, b.gains.kv, range(1)).unwrap();
    writeln!(md, "| Ti [ms] | {:.2} (fixed) | 7.5 (fixed) | {:.2} | 12.5 | {} |", a.gains.ti, b.gains.ti, range(2)).unwrap();
    writeln!(md, "| Cost f | {} | 1.5048e-4 | {} | 1.3923e-4 | – |", sci(a.cost), sci(b.cost)).unwrap();
    Ok(md)
}

fn table3(cfg: &CampaignConfig, dir: &Path) -> Result<String> {
    let cfg = with_bounds(cfg, 3);
    let (weights, _) = prepare_weights(&cfg, Some(dir))?;
    let relay = relay_report(&cfg, &weights)?;
    write_relay(&relay, dir)?;
    let runs = reports(&run_timed(&cfg, &weights, Method::Cbo, dir)?);
    let s = summarize_reports(&cfg.study, "cbo", &runs, weights.critical_gains, cfg.base_seed);
    write_json(&dir.join("summary_cbo.json"), &s)?;
    let gain = |f: fn(&GainVector) -> f64| {
        let v: Vec<f64> = s.best_gains.iter().map(f).collect();
        super::stats::summarize(&v, cfg.base_seed)
    };
    let mut md = String::new();
    writeln!(md, "# CBO against relay-feedback tuning\n").unwrap();
    writeln!(md, "{} CBO repetitions; mean ± half-width of the 95% bootstrap interval.\n", runs.len()).unwrap();
    writeln!(md, "| Parameter | CBO | CBO (paper) | Relay feedback | Relay (paper) |").unwrap();
    writeln!(md, "|---|---|---|---|---|").unwrap();
    writeln!(md, "| Kp [1000/min] | {} | 57.64 ± 5.67 | {:.2} | 41.72 |", mean_pm(&gain(|g| g.kp), fixed2), relay.gains.kp).unwrap();
    writeln!(md, "| Kv [N/(mm/min)] | {} | 6.48 ± 0.77 | {:.2} | 3.64 |", mean_pm(&gain(|g| g.kv), fixed2), relay.gains.kv).unwrap();
    writeln!(md, "| Ti [ms] | {} | 13.90 ± 0.32 | {:.2} | 16.80 |", mean_pm(&gain(|g| g.ti), fixed2), relay.gains.ti).unwrap();
    writeln!(md, "| Cost f | {} | 1.48e-4 ± 0.11e-4 | {} | 2.78e-4 |", mean_pm(&s.final_cost, sci), sci(relay.final_cost)).unwrap();
    writeln!(md, "| Number of iterations N | {} | 71 ± 31 | {} | 1 |", mean_pm(&s.iterations, fixed2), relay.iterations).unwrap();
    Ok(md)
}

fn table4(cfg: &CampaignConfig, dir: &Path) -> Result<String> {
    let cfg = with_bounds(cfg, 2);
    let (weights, _) = prepare_weights(&cfg, Some(dir))?;
    let mut rows = Vec::new();
    let variants: [(&str, Method, HyperMode, &str, &str, &str); 3] = [
        ("CBO", Method::Cbo, HyperMode::Tuned, "1.50e-4 ± 5.59e-7", "303.5", "1"),
        ("SafeOpt (tuned)", Method::Safeopt, HyperMode::Tuned, "1.55e-4 ± 2.08e-6", "710.2", "5"),
        ("SafeOpt (fixed)", Method::Safeopt, HyperMode::FixedConservative, "1.59e-4 ± 1.28e-5", "707.3", "0"),
    ];
    for (label, method, mode, p_cost, p_time, p_viol) in variants {
        let mut c = cfg.clone();
        c.safeopt.hyper_mode = mode;
        let sub = dir.join(label.to_lowercase().replace([' ', '(', ')'], ""));
        fs::create_dir_all(&sub)?;
        let timed = run_timed(&c, &weights, method, &sub)?;
        let times: Vec<f64> = timed.iter().map(|t| t.seconds).collect();
        let s = summarize_reports(&c.study, method.as_str(), &reports(&timed), weights.critical_gains, c.base_seed);
        write_json(&sub.join(format!("summary_{}.json", method.as_str())), &s)?;
        rows.push(format!(
            "| {label} | {} | {p_cost} | {:.3} | {p_time} | {} | {p_viol} |",
            mean_pm(&s.final_cost, sci),
            median(&times),
            s.violations.median
        ));
    }
    let mut md = String::new();
    writeln!(md, "# CBO against SafeOpt (Kp and Kv)\n").unwrap();
    writeln!(md, "Final cost as mean ± half-width of the 95% bootstrap interval; times are medians of wall-clock seconds on this machine.\n").unwrap();
    writeln!(md, "| Method | Final cost | Final cost (paper) | Comp. time [s] | Comp. time (paper) | Constr. violations | Violations (paper) |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|").unwrap();
    for r in rows {
        writeln!(md, "{r}").unwrap();
    }
    Ok(md)
}

fn pso_appendix(cfg: &CampaignConfig, dir: &Path) -> Result<String> {
    let base = with_bounds(cfg, 3);
    let (weights, _) = prepare_weights(&base, Some(dir))?;
    let paper = [("39", "45.2", "1.47e-4 ± 1.01e-5"), ("32", "172.5", "1.46e-4 ± 1.1e-5")];
    let mut variants: Vec<(String, AcquisitionOptimizer, (&str, &str, &str))> = base
        .reproduce
        .appendix_grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let label = format!("grid search {}×{}×{}", g[0], g[1], g[2]);
            let p = paper.get(i).copied().unwrap_or(("–", "–", "–"));
            (label, AcquisitionOptimizer::Grid { resolution: g.clone() }, p)
        })
        .collect();
    variants.push((
        format!("PSO {} particles", match &base.tuner.optimizer {
            AcquisitionOptimizer::Pso(p) => p.particles,
            _ => 10,
        }),
        match &base.tuner.optimizer {
            AcquisitionOptimizer::Pso(p) => AcquisitionOptimizer::Pso(p.clone()),
            _ => AcquisitionOptimizer::default(),
        },
        ("49.5", "115.84", "1.45e-7 ± 9.63e-6"),
    ));
    let mut md = String::new();
    writeln!(md, "# Acquisition maximization: swarm against grid search (Kp, Kv, Ti)\n").unwrap();
    writeln!(md, "Iterations and times are medians (wall-clock seconds on this machine); cost is mean ± half-width of the 95% bootstrap interval.\n").unwrap();
    writeln!(md, "| Search method | Iterations N | N (paper) | Comp. time [s] | Time (paper) | Cost f | Cost (paper) |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|").unwrap();
    for (i, (label, opt, (pn, pt, pc))) in variants.into_iter().enumerate() {
        let mut c = base.clone();
        c.tuner.optimizer = opt;
        let sub = dir.join(format!("variant{i}"));
        fs::create_dir_all(&sub)?;
        let timed = run_timed(&c, &weights, Method::Cbo, &sub)?;
        let times: Vec<f64> = timed.iter().map(|t| t.seconds).collect();
        let s = summarize_reports(&c.study, "cbo", &reports(&timed), weights.critical_gains, c.base_seed);
        write_json(&sub.join("summary_cbo.json"), &s)?;
        writeln!(
            md,
            "| {label} | {} | {pn} | {:.3} | {pt} | {} | {pc} |",
            s.iterations.median,
            median(&times),
            mean_pm(&s.final_cost, sci)
        )
        .unwrap();
    }
    Ok(md)
}
