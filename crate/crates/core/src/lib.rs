//! Event-triggered LQG control of independent loops sharing a slotted
//! contention channel.
//!
//! The crate covers the full chain for each loop: plant model and noise
//! ([`plant`]), steady-state gains ([`riccati`]), local Kalman filter and
//! remote estimator ([`estimation`]), the purely stochastic, stochastic
//! threshold and combined triggering policies ([`scheduling`]), the channel
//! ([`network`]), closed-form costs and utility tuning ([`analysis`]) and a
//! reproducible Monte Carlo engine ([`sim`]).

pub mod analysis;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod network;
pub mod plant;
pub mod presets;
pub mod report;
pub mod reproduce;
pub mod riccati;
pub mod rng;
pub mod scheduling;
pub mod sim;

pub use error::{Error, Result};
pub use network::NetworkConfig;
pub use plant::PlantParams;
pub use riccati::GainSet;
pub use scheduling::Policy;
