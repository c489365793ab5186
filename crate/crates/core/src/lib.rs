//! A federated social network protocol and a deterministic multi-site
//! simulator to run it on.
//!
//! Sites are [`site::Site`] values owned by a [`Simulation`]. Every
//! inter-site exchange goes through the simulator as a signed envelope, so a
//! run is fully determined by its scenario and seed.

pub mod activities;
pub mod error;
pub mod harness;
pub mod identity;
pub mod model;
pub mod objects;
pub mod privacy;
pub mod profiles;
pub mod site;
pub mod wire;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use harness::{Faults, LinkParams, SimConfig, Simulation, Topology, Trace, TraceEvent};
