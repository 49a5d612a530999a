use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use cascade_tune::harness::{
    prepare_weights, relay_report, reproduce, run_campaign, run_compare, run_grid, write_model_artifacts,
    write_relay, CampaignConfig, Method, Table,
};
use cascade_tune::metrics::{evaluate_candidate, write_metrics_csv};
use cascade_tune::scan::detect_critical_gains;
use cascade_tune::sim::{simulate_cycle, GainVector};
use cascade_tune::Error;

#[derive(Parser)]
#[command(name = "cascade-tune", version, about = "Safety-aware Bayesian tuning of a cascaded servo loop")]
struct Cli {
    /// Campaign file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed of the campaign.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid cells and repetitions.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates one cycle: trace.csv and metrics.csv.
    Simulate {
        #[arg(long)]
        kp: Option<f64>,
        #[arg(long)]
        kv: Option<f64>,
        #[arg(long)]
        ti: Option<f64>,
    },
    /// Exhaustive grid evaluation: grid.csv and grid_optimum.json.
    Grid {
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Critical-gain scan: scan.csv and critical_gains.json.
    Scan,
    /// CBO campaign over all repetitions.
    Tune,
    /// Comparison tuners.
    Baseline {
        #[command(subcommand)]
        which: Baseline,
    },
    /// CBO, relay and SafeOpt on the same seeds: compare.csv.
    Compare,
    /// Regenerates a results table as markdown.
    Reproduce {
        /// table2, table3, table4 or pso-appendix
        table: String,
    },
}

#[derive(Subcommand)]
enum Baseline {
    Relay,
    Safeopt,
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::Toml(_) | Error::MissingCriticalGains)
}

fn load(cli: &Cli) -> Result<CampaignConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &CampaignConfig) -> Result<(), Error> {
    let out: &Path = &cfg.output_dir;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::Simulate { kp, kv, ti } => {
            let g = GainVector {
                kp: kp.unwrap_or(cfg.gains.kp),
                kv: kv.unwrap_or(cfg.gains.kv),
                ti: ti.unwrap_or(cfg.gains.ti),
            };
            g.validate()?;
            let noise = cfg.noise.with_seed(cfg.base_seed);
            simulate_cycle(&cfg.plant, &g, &cfg.profile, &noise)
                .write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))?;
            let o = evaluate_candidate(&g, &cfg.plant, &cfg.profile, &cfg.weights, &noise)?;
            write_metrics_csv(&[o], BufWriter::new(File::create(out.join("metrics.csv"))?))?;
            info!("cost {:.4e}, constraint {:.4e}", o.y, o.z);
        }
        Command::Grid { dims } => {
            let dims = dims.unwrap_or(cfg.grid.dims);
            if !(2..=3).contains(&dims) {
                return Err(Error::config("E_GRID", "grid dims must be 2 or 3"));
            }
            let (weights, _) = prepare_weights(cfg, Some(out))?;
            let g = run_grid(
                &cfg.plant,
                &cfg.profile,
                &weights,
                &cfg.grid.bounds_for(dims),
                cfg.grid.resolution(dims),
                cfg.grid.fixed_ti,
            )?;
            g.write_csv(BufWriter::new(File::create(out.join("grid.csv"))?))?;
            fs::write(out.join("grid_optimum.json"), serde_json::to_string_pretty(&g.optimum())? + "\n")?;
            info!("grid optimum {:?} cost {:.4e}", g.best().x, g.best().y);
        }
        Command::Scan => {
            let scan = cfg.scan.clone().unwrap_or_default();
            let c = detect_critical_gains(&cfg.plant, &cfg.profile, &scan)?;
            c.write_csv(BufWriter::new(File::create(out.join("scan.csv"))?))?;
            fs::write(out.join("critical_gains.json"), serde_json::to_string_pretty(&c)? + "\n")?;
            info!(
                "Kv_crit {:.4} Kp_crit {:.4} after {} simulations (threshold reached: {})",
                c.kv_crit,
                c.kp_crit,
                c.simulations,
                c.threshold_reached()
            );
        }
        Command::Tune => {
            let o = run_campaign(cfg, Method::Cbo, out)?;
            write_model_artifacts(&o.reports[0], &o.weights, out)?;
            info!("median final cost {:.4e}", o.summary.final_cost.median);
        }
        Command::Baseline { which: Baseline::Relay } => {
            let (weights, _) = prepare_weights(cfg, Some(out))?;
            let r = relay_report(cfg, &weights)?;
            write_relay(&r, out)?;
            info!("relay gains {:?} cost {:.4e}", r.gains, r.final_cost);
        }
        Command::Baseline { which: Baseline::Safeopt } => {
            let o = run_campaign(cfg, Method::Safeopt, out)?;
            info!("median final cost {:.4e}", o.summary.final_cost.median);
        }
        Command::Compare => {
            let rows = run_compare(cfg, out)?;
            info!("{} comparison rows", rows.len());
        }
        Command::Reproduce { table } => {
            let t: Table = table.parse()?;
            let md = reproduce(t, cfg, out)?;
            println!("{md}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("{e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 3 })
        }
    }
}
