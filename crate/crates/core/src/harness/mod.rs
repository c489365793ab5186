//! Simulation harness: topology, scheduler, trace, scenarios and checks.

pub mod audit;
pub mod oracle;
pub mod scenario;
mod sim;
pub mod swat0;
mod topology;
mod trace;

pub use scenario::{parse_scenario, run_scenario, RunOptions};
pub use sim::{Faults, SimConfig, Simulation, StepReport, DEFAULT_MAX_TICKS, DEFAULT_RETRIES};
pub use swat0::run_swat0;
pub use topology::{LinkParams, Topology};
pub use trace::{Trace, TraceEvent};
