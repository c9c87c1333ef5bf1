//! Synthetic scenarios run through the real station, link and server code.

mod batch;
mod generate;
mod replay;
mod report;
mod scenario;
mod world;

pub use batch::*;
pub use generate::{generate_trace, station_inputs, true_load, Burst, GeneratedTrace, TruthVisit, SAMPLE_PERIOD_MS};
pub use replay::{read_station_trace, replay, write_station_trace};
pub use report::{match_visits, AnimalReport, Interval, ScenarioReport};
pub use scenario::*;
pub use world::{run_station, simulate, simulate_with, station_config, LinkStats, ScenarioRun, SimLink, DRAIN_MS};

/// Generate, run and score a scenario.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    let run = simulate(sc)?;
    let cfg = station_config(sc);
    Ok(ScenarioReport::from_run(sc, &run, cfg.epoch_s, cfg.system_update_period_s))
}
