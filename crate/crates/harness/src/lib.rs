//! Scenario runner for the wireless energy meter fleet.
//!
//! A [`Scenario`] wires simulated meters, one SMS channel and the head end
//! into a deterministic one-second event loop ([`Simulation`]). The same loop
//! drives the live mode behind `wem serve`.

pub mod live;
pub mod scenario;
pub mod sim;

pub use scenario::{Scenario, ScenarioError, ScenarioSpec};
pub use sim::{Event, RunReport, Simulation};

/// Validates and runs a scenario to completion with in-memory state.
pub fn run(spec: &ScenarioSpec) -> Result<RunReport, ScenarioError> {
    let scenario = spec.validate()?;
    let mut sim = Simulation::new(&scenario);
    sim.run();
    Ok(sim.report())
}
