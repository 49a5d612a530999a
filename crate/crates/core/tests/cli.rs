//! End-to-end runs of the binary: exit codes and re-parsing of every file it writes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cascade_tune::gp::GpDump;
use cascade_tune::harness::io::{
    read_csv_file, read_json_file, read_markdown_tables, AcquisitionRow, CompareRow, MetricsRow, RelayRow,
    ReportRow, ScanRow, TraceRow, ACQUISITION_HEADER, COMPARE_HEADER, METRICS_HEADER, RELAY_HEADER,
    REPORT_HEADER, SCAN_HEADER, TRACE_HEADER,
};
use cascade_tune::harness::{CampaignConfig, CampaignSummary, GridOptimum, RelayReport};
use cascade_tune::scan::CriticalGains;
use cascade_tune::tuner::TuneReport;

const SMALL: &str = r#"
study = "cli"
repetitions = 10
[tuner]
max_iterations = 3
[safeopt]
iterations = 3
[grid]
resolution_2d = [6, 5]
resolution_3d = [4, 3, 3]
[reproduce]
appendix_grids = [[6, 4, 3]]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cascade-tune"));
    c.env("RUST_LOG", "warn");
    c
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("campaign.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    (dir, cfg, out)
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> i32 {
    let s = bin()
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .status()
        .unwrap();
    s.code().unwrap()
}

#[test]
fn config_errors_exit_with_2() {
    let (_d, cfg, out) = setup("repetitions = 0\n");
    assert_eq!(run(&cfg, &out, &["simulate"]), 2);
    let (_d, cfg, out) = setup("not toml [\n");
    assert_eq!(run(&cfg, &out, &["simulate"]), 2);
    let (_d, cfg, out) = setup(SMALL);
    assert_eq!(run(&cfg, &out, &["reproduce", "table9"]), 2);
    assert_eq!(run(&cfg, &out, &["grid", "--dims", "4"]), 2);
    assert_eq!(run(&cfg, &out, &["simulate", "--kp=-1"]), 2);
    assert_eq!(run(&out.join("missing.toml"), &out, &["simulate"]), 2);
}

#[test]
fn runtime_failures_exit_with_3() {
    // the low-Kv corner is far past the constraint bound
    let (_d, cfg, out) = setup(
        "repetitions = 1\n[safeopt]\niterations = 2\nsafe_seed_set = [{ kp = 20.0, kv = 0.5, ti = 7.5 }]\n",
    );
    assert_eq!(run(&cfg, &out, &["baseline", "safeopt"]), 3);
}

#[test]
fn simulate_grid_scan_and_relay_files_reparse() {
    let (_d, cfg, out) = setup(SMALL);
    assert_eq!(run(&cfg, &out, &["simulate", "--kp", "30", "--kv", "2"]), 0);
    let trace: Vec<TraceRow> = read_csv_file(&out.join("trace.csv"), TRACE_HEADER).unwrap();
    assert!(trace.len() > 100);
    let m: Vec<MetricsRow> = read_csv_file(&out.join("metrics.csv"), METRICS_HEADER).unwrap();
    assert_eq!((m.len(), m[0].kp, m[0].kv), (1, 30.0, 2.0));

    assert_eq!(run(&cfg, &out, &["grid"]), 0);
    let g: Vec<MetricsRow> = read_csv_file(&out.join("grid.csv"), METRICS_HEADER).unwrap();
    assert_eq!(g.len(), 30);
    let opt: GridOptimum = read_json_file(&out.join("grid_optimum.json")).unwrap();
    let min = g.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    assert!(opt.cost >= min && opt.cells == 30);

    assert_eq!(run(&cfg, &out, &["scan"]), 0);
    let s: Vec<ScanRow> = read_csv_file(&out.join("scan.csv"), SCAN_HEADER).unwrap();
    let c: CriticalGains = read_json_file(&out.join("critical_gains.json")).unwrap();
    assert_eq!(s.len(), c.scan_log.len());

    assert_eq!(run(&cfg, &out, &["baseline", "relay"]), 0);
    let r: Vec<RelayRow> = read_csv_file(&out.join("relay.csv"), RELAY_HEADER).unwrap();
    let rep: RelayReport = read_json_file(&out.join("relay.json")).unwrap();
    assert_eq!(r.len(), rep.stages.len());
    assert_eq!(rep.iterations, 1);
}

#[test]
fn tune_writes_ten_reports_a_summary_and_model_dumps() {
    let (_d, cfg, out) = setup(SMALL);
    assert_eq!(run(&cfg, &out, &["--seed", "40", "tune"]), 0);
    let summary: CampaignSummary = read_json_file(&out.join("summary_cbo.json")).unwrap();
    assert_eq!(summary.seeds, (40..50).collect::<Vec<_>>());
    for s in 40..50 {
        let json = fs::read_to_string(out.join(format!("cbo_seed{s}.json"))).unwrap();
        let r = TuneReport::from_json(&json).unwrap();
        let rows: Vec<ReportRow> = read_csv_file(&out.join(format!("cbo_seed{s}.csv")), REPORT_HEADER).unwrap();
        assert_eq!(rows.len(), r.initial_design.len() + r.history.len());
        assert!(rows[..r.initial_design.len()].iter().all(|x| x.acq.is_none()));
    }
    for f in ["gp_cost.json", "gp_constraint.json"] {
        let d: GpDump = read_json_file(&out.join(f)).unwrap();
        d.restore().unwrap();
    }
    let a: Vec<AcquisitionRow> = read_csv_file(&out.join("acquisition.csv"), ACQUISITION_HEADER).unwrap();
    assert_eq!(a.len(), 61 * 61);
    assert!(a.iter().all(|r| r.cei >= 0.0));
}

#[test]
fn compare_rows_cover_every_method_and_seed() {
    let (_d, cfg, out) = setup(&SMALL.replace("repetitions = 10", "repetitions = 2"));
    assert_eq!(run(&cfg, &out, &["compare"]), 0);
    let rows: Vec<CompareRow> = read_csv_file(&out.join("compare.csv"), COMPARE_HEADER).unwrap();
    let methods: Vec<(&str, u64)> = rows.iter().map(|r| (r.method.as_str(), r.seed)).collect();
    assert_eq!(
        methods,
        [("cbo", 0), ("cbo", 1), ("relay", 0), ("relay", 1), ("safeopt", 0), ("safeopt", 1)]
    );
    let s: Vec<CampaignSummary> = read_json_file(&out.join("compare_summary.json")).unwrap();
    assert_eq!(s.len(), 2);
}

#[test]
fn reproduced_tables_parse_as_markdown() {
    let (_d, cfg, out) = setup(&SMALL.replace("repetitions = 10", "repetitions = 2"));
    for (table, rows) in [("table2", 4), ("pso-appendix", 2)] {
        assert_eq!(run(&cfg, &out, &["reproduce", table]), 0);
        let md = fs::read_to_string(out.join(format!("{table}.md"))).unwrap();
        let t = read_markdown_tables(&md);
        assert_eq!(t.len(), 1, "{table}");
        assert_eq!(t[0].rows.len(), rows, "{table}");
        assert!(t[0].rows.iter().all(|r| r.len() == t[0].headers.len()));
    }
}

#[test]
fn config_written_back_reloads() {
    let c = CampaignConfig::from_toml(SMALL).unwrap();
    assert_eq!(CampaignConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
}
