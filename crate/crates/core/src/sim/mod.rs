//! Closed-loop simulation of the linear axis and plant identification.

mod gains;
mod identify;
mod plant;
mod profile;
mod simulate;

pub use gains::{kp_from_si, kv_from_si, GainVector, FIXED_TI_MS};
pub use identify::identify_plant;
pub use plant::{ripple_force, PlantParams, RATED_FORCE};
pub use profile::{ReferenceProfile, SampledReference};
pub use simulate::{simulate_cycle, NoiseModel, SimTrace, DIVERGENCE_LIMIT};
pub(crate) use simulate::Axis;
