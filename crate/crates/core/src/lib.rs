//! Safety-aware Bayesian tuning of a cascaded position/velocity servo loop.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod baselines;
pub mod bounds;
pub mod design;
pub mod error;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod scan;
pub mod sim;
pub mod tuner;

pub use bounds::Bounds;
pub use error::{Error, Result};
