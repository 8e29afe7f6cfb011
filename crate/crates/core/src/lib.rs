//! Damage-aware vehicular crowdsensing: verify social-media road reports by
//! dispatching cars over a grid road network that degrades as it is used.

pub mod allocation;
pub mod config;
pub mod engine;
pub mod error;
pub mod incentives;
pub mod output;
pub mod rng;
pub mod routing;
pub mod scenario;
pub mod scouting;
pub mod social;
pub mod sweep;
pub mod tune;
pub mod world;

pub use error::{Error, Result};
