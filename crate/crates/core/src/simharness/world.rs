use rand_chacha::ChaCha8Rng;

use super::generate::{generate_trace, rng_for, station_inputs, GeneratedTrace, STREAM_LINK};
use super::scenario::{Scenario, ScenarioError};
use crate::server::{ManualClock, MemoryStorage, Server, StoredVisit};
use crate::station::{Confirmation, RunSummary, SingleTaskStation, StationConfig, StationInput, StationLog, Transport};
use crate::uplinkqueue::{LinkModel, Transmission};

/// Time the queue gets after the scenario ends to deliver its backlog.
pub const DRAIN_MS: i64 = 24 * 3_600_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub transmissions: usize,
    pub delivered: usize,
    pub acked: usize,
    /// Uplinks the server accepted for the first time.
    pub first_receptions: usize,
}

/// Lossy radio in front of an in-process server.
pub struct SimLink {
    server: Server<MemoryStorage, ManualClock>,
    clock: ManualClock,
    link: LinkModel,
    rng: ChaCha8Rng,
    epoch_s: u32,
    stats: LinkStats,
}

impl SimLink {
    pub fn new(link: LinkModel, seed: u64, epoch_s: u32) -> Self {
        let clock = ManualClock::new(epoch_s);
        let server = Server::open(MemoryStorage::new(), clock.clone()).expect("memory storage does not fail");
        Self { server, clock, link, rng: rng_for(seed, STREAM_LINK), epoch_s, stats: LinkStats::default() }
    }

    pub fn server(&self) -> &Server<MemoryStorage, ManualClock> {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut Server<MemoryStorage, ManualClock> {
        &mut self.server
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }
}

impl Transport for SimLink {
    fn transmit(&mut self, station_id: u16, tx: &Transmission, now_ms: i64) -> Option<Confirmation> {
        self.stats.transmissions += 1;
        let outcome = self.link.transmit(&mut self.rng);
        if !outcome.delivered {
            return None;
        }
        self.stats.delivered += 1;
        let arrival = now_ms + self.link.latency_ms / 2;
        self.clock.set(self.epoch_s.saturating_add((arrival / 1000).max(0) as u32));
        let out = self.server.ingest(station_id, &tx.payload).expect("memory storage does not fail");
        if out.ack && !out.duplicate {
            self.stats.first_receptions += 1;
        }
        if !(out.ack && outcome.acked) {
            return None;
        }
        self.stats.acked += 1;
        Some(Confirmation { at_ms: now_ms + self.link.latency_ms, seq: tx.seq, downlink: out.downlink })
    }
}

pub fn station_config(sc: &Scenario) -> StationConfig {
    let mut cfg = StationConfig::default();
    cfg.queue.max_attempts = sc.max_attempts;
    cfg.link = sc.link.clone();
    cfg
}

/// Everything a scenario run produced.
pub struct ScenarioRun {
    pub trace: GeneratedTrace,
    pub summary: RunSummary,
    pub log: StationLog,
    pub server_visits: Vec<StoredVisit>,
    pub link: LinkStats,
    pub world: SimLink,
}

/// Drive inputs through a deterministic station and a simulated link.
pub fn run_station(
    cfg: StationConfig,
    inputs: Vec<StationInput>,
    link: SimLink,
    duration_ms: i64,
) -> Result<(RunSummary, StationLog, SimLink), ScenarioError> {
    let mut station = SingleTaskStation::in_memory(cfg).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let mut link = link;
    let summary = station.run(inputs, &mut link, duration_ms, DRAIN_MS);
    Ok((summary, station.orchestrator().log().clone(), link))
}

pub fn simulate(sc: &Scenario) -> Result<ScenarioRun, ScenarioError> {
    simulate_with(sc, |_| {})
}

/// Like [`simulate`], with a hook to prepare the server (trap targets and
/// the like) before the station boots.
pub fn simulate_with(
    sc: &Scenario,
    setup: impl FnOnce(&mut Server<MemoryStorage, ManualClock>),
) -> Result<ScenarioRun, ScenarioError> {
    let trace = generate_trace(sc)?;
    let cfg = station_config(sc);
    let mut link = SimLink::new(sc.link.clone(), sc.seed, cfg.epoch_s);
    setup(link.server_mut());
    let inputs = station_inputs(sc, &trace);
    let (summary, log, world) = run_station(cfg, inputs, link, sc.duration_ms)?;
    let server_visits = world.server().visits().cloned().collect();
    Ok(ScenarioRun { trace, summary, log, server_visits, link: world.stats(), world })
}
