//! Campaign plumbing: TOML configs, grid studies, repeated campaigns,
//! method comparisons, table reproduction and readers for every emitted file.

mod campaign;
mod config;
mod grid;
pub mod io;
mod reproduce;
pub mod stats;

pub use campaign::{
    prepare_weights, relay_report, run_campaign, run_compare, run_method, summarize_reports, write_model_artifacts,
    write_relay, CampaignOutcome, CampaignSummary, Method, RelayReport,
};
pub use config::{CampaignConfig, GridConfig, ReproduceConfig};
pub use grid::{grid_axes, run_grid, run_grid_with, GridOptimum, GridStudy};
pub use reproduce::{reproduce, Table};
pub use stats::{summarize, Summary};
