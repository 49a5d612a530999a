//! Comparison tuners: relay-feedback autotuning and a swarm-based safe
//! Bayesian optimizer.

mod relay;
mod safeopt;

pub use relay::{position_relay, relay_tune, velocity_relay, RelayConfig, RelayOutcome, RelayRules, RelayStage};
pub use safeopt::{safeopt_tune, safeopt_tune_with, HyperMode, SafeOptConfig};
