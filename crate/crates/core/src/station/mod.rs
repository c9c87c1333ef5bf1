//! The station daemon: routes scale samples, tag reads and link traffic
//! between the weighing engine, tag matching, the trap and the uplink queue.
//!
//! Time is always passed in explicitly (milliseconds of station time), so
//! the same code runs against a simulated clock and in the threaded
//! runtime.

mod config;
pub mod runtime;

pub use config::{ConfigError, StationConfig};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use log::{debug, info, warn};
use thiserror::Error;

use crate::codec::{self, AnimalUpdate, DbSyncRequest, Downlink, ErrorFlags, Message, SystemUpdate, TrapEvent, TrapUpdate, Uplink};
use crate::rfid::{decode_frame, match_detections, FdxbFrame, RfidDetection};
use crate::trapctl::{should_trap, ApplyOutcome, CaptureEvent, DoorSim, DoorState, TrapController, TrapDatabase, TrapDbError};
use crate::uplinkqueue::{FileStorage, LogStorage, MemStorage, QueueError, Transmission, UplinkQueue};
use crate::weighing::{AnimalVisit, WeighingEngine, WeighingEvent, WeightSample};

#[derive(Debug, Error)]
pub enum StationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    TrapDb(#[from] TrapDbError),
}

/// Climate sensors inside and outside the casing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvReading {
    pub temp_in_c: f64,
    pub temp_out_c: f64,
    pub rh_in_pct: f64,
    pub rh_out_pct: f64,
}

impl Default for EnvReading {
    fn default() -> Self {
        Self { temp_in_c: 22.0, temp_out_c: 18.0, rh_in_pct: 45.0, rh_out_pct: 60.0 }
    }
}

impl EnvReading {
    fn deci(v: f64, lo: f64, hi: f64) -> i32 {
        (v.clamp(lo, hi) * 10.0).round() as i32
    }

    fn temp_dc(v: f64) -> i16 {
        Self::deci(v, -40.0, 369.5) as i16
    }

    fn rh_dpct(v: f64) -> u16 {
        Self::deci(v, 0.0, 100.0) as u16
    }
}

/// A confirmation coming back from the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confirmation {
    /// Station time at which the confirmation arrives.
    pub at_ms: i64,
    pub seq: u16,
    pub downlink: Option<Vec<u8>>,
}

/// Whatever carries uplinks to the server.
pub trait Transport {
    /// Send one transmission. Returns the confirmation if one will arrive.
    fn transmit(&mut self, station_id: u16, tx: &Transmission, now_ms: i64) -> Option<Confirmation>;
}

/// A radio that is never answered.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullTransport;

impl Transport for NullTransport {
    fn transmit(&mut self, _: u16, _: &Transmission, _: i64) -> Option<Confirmation> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StationInput {
    Sample(WeightSample),
    Detection(RfidDetection),
    /// Raw reader frame, decoded by the station.
    Frame { ts: i64, frame: FdxbFrame },
    /// The tag reader stopped (`down`) or resumed answering.
    RfidFault { ts: i64, down: bool },
    Env { ts: i64, reading: EnvReading },
    /// An operator emptied the trap and reset the doors.
    OperatorReset { ts: i64 },
}

impl StationInput {
    pub fn ts(&self) -> i64 {
        match self {
            StationInput::Sample(s) => s.t,
            StationInput::Detection(d) => d.ts,
            StationInput::Frame { ts, .. }
            | StationInput::RfidFault { ts, .. }
            | StationInput::Env { ts, .. }
            | StationInput::OperatorReset { ts } => *ts,
        }
    }
}

/// Everything the station emitted, for accounting and reports.
#[derive(Debug, Clone, Default)]
pub struct StationLog {
    pub uplinks: Vec<(i64, Uplink)>,
    pub visits: Vec<AnimalVisit>,
    pub captures: Vec<CaptureEvent>,
    pub downlinks: Vec<TrapUpdate>,
    pub enqueue_failures: usize,
    pub frame_errors: usize,
}

impl StationLog {
    pub fn count(&self, ty: codec::MessageType) -> usize {
        self.uplinks.iter().filter(|(_, u)| u.message_type() == ty).count()
    }
}

#[derive(Debug)]
struct PendingRelease {
    at: i64,
    visits: Vec<AnimalVisit>,
}

/// Detections older than this are dropped if no visit claimed them.
const DETECTION_RETENTION_MS: i64 = 600_000;

#[allow(clippy::type_complexity)]
pub struct Orchestrator<S: LogStorage> {
    cfg: StationConfig,
    queue: UplinkQueue<S>,
    db: TrapDatabase,
    trap: TrapController,
    detections: Vec<RfidDetection>,
    pending: Vec<PendingRelease>,
    /// Confirmations in arrival order: time, seq, piggybacked downlink.
    confirmations: BinaryHeap<Reverse<(i64, u16, Option<Vec<u8>>)>>,
    env: EnvReading,
    scale_fault: bool,
    rfid_down: bool,
    rfid_fault_seen: bool,
    storage_fault: bool,
    periodic: bool,
    next_system_ms: i64,
    next_dbsync_ms: i64,
    now: i64,
    log: StationLog,
}

impl<S: LogStorage> std::fmt::Debug for Orchestrator<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("now", &self.now).field("queue", &self.queue).finish()
    }
}

impl<S: LogStorage> Orchestrator<S> {
    pub fn new(cfg: StationConfig, storage: S) -> Result<Self, StationError> {
        cfg.validate()?;
        let queue = UplinkQueue::open(storage, cfg.queue.clone())?;
        let db = match &cfg.trapdb_path {
            Some(p) => TrapDatabase::load(p)?,
            None => TrapDatabase::new(),
        };
        let mut door = DoorSim::new(cfg.door.clone());
        if let Err(e) = door.calibrate() {
            warn!("door calibration failed: {e}");
        }
        let trap = TrapController::new(door, cfg.station_id());
        let period = cfg.system_update_period_s as i64 * 1000;
        Ok(Self {
            queue,
            db,
            trap,
            detections: Vec::new(),
            pending: Vec::new(),
            confirmations: BinaryHeap::new(),
            env: EnvReading::default(),
            scale_fault: false,
            rfid_down: false,
            rfid_fault_seen: false,
            storage_fault: false,
            periodic: true,
            next_system_ms: period,
            next_dbsync_ms: 0,
            now: 0,
            log: StationLog::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &StationConfig {
        &self.cfg
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn db(&self) -> &TrapDatabase {
        &self.db
    }

    pub fn queue(&self) -> &UplinkQueue<S> {
        &self.queue
    }

    pub fn trap(&self) -> &TrapController {
        &self.trap
    }

    pub fn trap_mut(&mut self) -> &mut TrapController {
        &mut self.trap
    }

    pub fn log(&self) -> &StationLog {
        &self.log
    }

    fn unix_s(&self, ms: i64) -> u32 {
        (self.cfg.epoch_s as i64 + ms.div_euclid(1000)).clamp(0, u32::MAX as i64) as u32
    }

    /// Current error bitmask as it would go into a status uplink.
    pub fn error_flags(&self) -> ErrorFlags {
        let mut f = ErrorFlags::empty();
        if self.scale_fault {
            f.insert(ErrorFlags::SCALE_FAULT);
        }
        if self.rfid_down || self.rfid_fault_seen {
            f.insert(ErrorFlags::RFID_FAULT);
        }
        if self.trap.door().state() == DoorState::Fault {
            f.insert(ErrorFlags::DOOR_FAULT);
        }
        if self.env.rh_in_pct >= self.cfg.humidity_warn_pct {
            f.insert(ErrorFlags::HUMIDITY_INGRESS);
        }
        if !self.queue.parked().is_empty() {
            f.insert(ErrorFlags::UPLINK_PARKED);
        }
        if self.storage_fault || self.queue.storage_failed() {
            f.insert(ErrorFlags::STORAGE_FAULT);
        }
        f
    }

    fn enqueue(&mut self, build: impl FnOnce(u16) -> Uplink) {
        let now = self.now;
        let mut built = None;
        let res = self.queue.enqueue_with(now, |seq| {
            let u = build(seq);
            let bytes = codec::encode_uplink(&u);
            built = Some((u, bytes.clone()));
            bytes.unwrap_or_default()
        });
        match (res, built) {
            (Ok(_), Some((u, Ok(_)))) => {
                debug!("enqueued {}", Message::Uplink(u.clone()));
                self.log.uplinks.push((now, u));
            }
            (_, Some((u, Err(e)))) => {
                warn!("cannot encode {:?}: {e}", u.message_type());
                self.log.enqueue_failures += 1;
            }
            (Err(e), _) => {
                warn!("enqueue failed: {e}");
                self.storage_fault = true;
                self.log.enqueue_failures += 1;
            }
            (Ok(_), None) => unreachable!("builder always runs on success"),
        }
    }

    fn enqueue_dbsync(&mut self) {
        let last_updated = self.db.last_updated();
        self.enqueue(|seq| Uplink::DbSync(DbSyncRequest { seq, last_updated }));
    }

    fn emit_system_update(&mut self) {
        let flags = self.error_flags();
        let ts = self.unix_s(self.now);
        let env = self.env;
        self.enqueue(|seq| {
            Uplink::System(SystemUpdate {
                seq,
                ts,
                temp_in_dc: EnvReading::temp_dc(env.temp_in_c),
                temp_out_dc: EnvReading::temp_dc(env.temp_out_c),
                rh_in_dpct: EnvReading::rh_dpct(env.rh_in_pct),
                rh_out_dpct: EnvReading::rh_dpct(env.rh_out_pct),
                error_flags: flags,
            })
        });
        self.scale_fault = false;
        self.rfid_fault_seen = false;
    }

    fn capture(&mut self, tag: Option<crate::rfid::TagId>, ts: i64) {
        match self.trap.trigger(tag, ts) {
            Ok(Some(ev)) => {
                let unix = self.unix_s(ev.ts);
                self.log.captures.push(ev);
                self.enqueue(|seq| Uplink::Trap(TrapEvent { seq, ts: unix, tag }));
                self.enqueue_dbsync();
            }
            Ok(None) => debug!("trap already closed, ignoring trigger"),
            Err(e) => warn!("door failed: {e}"),
        }
    }

    pub fn on_detection(&mut self, d: RfidDetection) {
        if should_trap(&self.db, Some(&d), false) {
            self.capture(Some(d.tag), d.ts);
        }
        self.detections.push(d);
    }

    pub fn on_frame(&mut self, ts: i64, frame: &FdxbFrame) {
        match decode_frame(frame) {
            Ok(f) if f.flags.animal => self.on_detection(RfidDetection { tag: f.tag, ts, station_id: self.cfg.station_id() }),
            Ok(_) => debug!("ignoring non-animal frame"),
            Err(e) => {
                debug!("bad frame: {e}");
                self.log.frame_errors += 1;
            }
        }
    }

    pub fn set_rfid_down(&mut self, down: bool) {
        if down && !self.rfid_down {
            warn!("tag reader not answering; continuing untagged");
        }
        self.rfid_down = down;
        self.rfid_fault_seen |= down;
    }

    pub fn set_env(&mut self, reading: EnvReading) {
        self.env = reading;
    }

    pub fn operator_reset(&mut self) {
        if let Err(e) = self.trap.reset() {
            warn!("reset failed: {e}");
        }
    }

    pub fn on_weighing_event(&mut self, ev: WeighingEvent) {
        match ev {
            WeighingEvent::Entrance { ts, onset_ts, .. } => {
                let window = self.cfg.rfid_window_ms();
                let read = self.detections.iter().any(|d| d.ts >= onset_ts - window && d.ts <= ts);
                if !read && should_trap(&self.db, None, true) {
                    self.capture(None, ts);
                }
            }
            WeighingEvent::Visits(visits) => {
                let last_exit = visits.iter().map(|v| v.exit_ts).max().unwrap_or(self.now);
                self.pending.push(PendingRelease { at: last_exit + self.cfg.rfid_window_ms(), visits });
            }
            WeighingEvent::SensorFault { .. } => self.scale_fault = true,
            WeighingEvent::Exit { .. } | WeighingEvent::Rejected { .. } => {}
        }
    }

    fn release(&mut self, mut visits: Vec<AnimalVisit>) {
        let window = self.cfg.rfid_window_ms();
        let mut consumed = match_detections(&mut visits, &self.detections, window);
        consumed.sort_unstable();
        consumed.dedup();
        for i in consumed.into_iter().rev() {
            self.detections.remove(i);
        }
        let epoch = self.cfg.epoch_s;
        for v in visits {
            match AnimalUpdate::from_visit(0, &v, epoch) {
                Ok(template) => self.enqueue(|seq| Uplink::Animal(AnimalUpdate { seq, ..template })),
                Err(e) => {
                    warn!("visit not reportable: {e}");
                    self.log.enqueue_failures += 1;
                }
            }
            self.log.visits.push(v);
        }
    }

    fn handle_confirmation(&mut self, seq: u16, downlink: Option<Vec<u8>>) {
        if let Err(e) = self.queue.confirm(seq) {
            warn!("recording confirmation failed: {e}");
        }
        let Some(bytes) = downlink else { return };
        match codec::decode(&bytes) {
            Ok(Message::Downlink(Downlink::TrapUpdate(u))) => {
                let outcome = self.db.apply_trap_update(&u);
                info!("trap update {} ops, master {:?}, more {}: {:?}", u.ops.len(), u.master, u.more_follows, outcome);
                if outcome == ApplyOutcome::Applied {
                    if let Some(p) = &self.cfg.trapdb_path {
                        if let Err(e) = self.db.save(p) {
                            warn!("saving trap database failed: {e}");
                            self.storage_fault = true;
                        }
                    }
                    if u.more_follows {
                        self.enqueue_dbsync();
                    }
                }
                self.log.downlinks.push(u);
            }
            Ok(other) => warn!("unexpected downlink {other}"),
            Err(e) => warn!("undecodable downlink: {e}"),
        }
    }

    fn next_event(&self) -> Option<i64> {
        let mut next = [
            self.periodic.then_some(self.next_system_ms),
            self.periodic.then_some(self.next_dbsync_ms),
            self.confirmations.peek().map(|Reverse((t, _, _))| *t),
            self.queue.next_wakeup(),
            self.pending.iter().map(|p| p.at).min(),
        ]
        .into_iter()
        .flatten()
        .min()?;
        next = next.max(self.now);
        Some(next)
    }

    /// Run everything due up to and including `t`.
    pub fn advance_to(&mut self, t: i64, transport: &mut dyn Transport) {
        while let Some(next) = self.next_event() {
            if next > t {
                break;
            }
            self.now = next;
            if !self.step(transport) {
                break;
            }
        }
        self.now = self.now.max(t);
    }

    /// Process what is due at `self.now`; false when nothing was.
    fn step(&mut self, transport: &mut dyn Transport) -> bool {
        let now = self.now;
        let mut progressed = false;
        while self.confirmations.peek().is_some_and(|Reverse((t, _, _))| *t <= now) {
            let Reverse((_, seq, down)) = self.confirmations.pop().unwrap();
            self.handle_confirmation(seq, down);
            progressed = true;
        }
        let due: Vec<PendingRelease> = {
            let (due, keep) = std::mem::take(&mut self.pending).into_iter().partition(|p| p.at <= now);
            self.pending = keep;
            due
        };
        for p in due {
            self.release(p.visits);
            progressed = true;
        }
        self.detections.retain(|d| d.ts >= now - DETECTION_RETENTION_MS);
        if self.periodic && self.next_system_ms <= now {
            self.emit_system_update();
            self.next_system_ms += self.cfg.system_update_period_s as i64 * 1000;
            progressed = true;
        }
        if self.periodic && self.next_dbsync_ms <= now {
            self.enqueue_dbsync();
            self.next_dbsync_ms += self.cfg.dbsync_period_s as i64 * 1000;
            progressed = true;
        }
        match self.queue.poll_transmit(now) {
            Ok(Some(tx)) => {
                progressed = true;
                if let Some(c) = transport.transmit(self.cfg.station_id(), &tx, now) {
                    self.confirmations.push(Reverse((c.at_ms.max(now), c.seq, c.downlink)));
                }
            }
            Ok(None) => {}
            Err(e) => {
                warn!("queue failure: {e}");
                self.storage_fault = true;
            }
        }
        if !progressed {
            // only a wakeup that poll_transmit declined; move past it
            return self.queue.next_wakeup().is_some_and(|w| w > now);
        }
        true
    }

    /// Stop periodic status and sync uplinks, e.g. before shutdown.
    pub fn stop_periodic(&mut self) {
        self.periodic = false;
    }

    /// Report visits still waiting for late tag reads right away.
    pub fn release_all(&mut self) {
        for p in std::mem::take(&mut self.pending) {
            self.release(p.visits);
        }
    }

    /// Keep the link running until the queue is empty or `deadline` passes.
    pub fn drain(&mut self, transport: &mut dyn Transport, deadline: i64) -> bool {
        while !self.queue.is_empty() || !self.confirmations.is_empty() {
            match self.next_event() {
                Some(next) if next <= deadline => {
                    self.now = next;
                    self.step(transport);
                }
                _ => break,
            }
        }
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub system_updates: usize,
    pub animal_updates: usize,
    pub trap_events: usize,
    pub db_syncs: usize,
    pub visits: usize,
    pub captures: usize,
    pub drained: bool,
    pub queue_left: usize,
    pub parked: usize,
    pub end_ms: i64,
}

/// Weighing engine and orchestrator in one task, for deterministic runs.
pub struct SingleTaskStation<S: LogStorage> {
    engine: WeighingEngine,
    orch: Orchestrator<S>,
}

impl SingleTaskStation<MemStorage> {
    pub fn in_memory(cfg: StationConfig) -> Result<Self, StationError> {
        Self::new(cfg, MemStorage::new())
    }
}

impl SingleTaskStation<FileStorage> {
    /// Queue in `cfg.queue_path`, or in memory when unset is not possible
    /// here; use [`SingleTaskStation::in_memory`] for that.
    pub fn with_files(cfg: StationConfig) -> Result<Self, StationError> {
        let path = cfg.queue_path.clone().ok_or_else(|| ConfigError::Invalid("queue_path is required".into()))?;
        Self::new(cfg, FileStorage::new(path))
    }
}

impl<S: LogStorage> SingleTaskStation<S> {
    pub fn new(cfg: StationConfig, storage: S) -> Result<Self, StationError> {
        let engine = WeighingEngine::new(cfg.weighing.clone());
        Ok(Self { engine, orch: Orchestrator::new(cfg, storage)? })
    }

    pub fn orchestrator(&self) -> &Orchestrator<S> {
        &self.orch
    }

    pub fn orchestrator_mut(&mut self) -> &mut Orchestrator<S> {
        &mut self.orch
    }

    pub fn engine(&self) -> &WeighingEngine {
        &self.engine
    }

    pub fn handle(&mut self, input: StationInput, transport: &mut dyn Transport) {
        self.orch.advance_to(input.ts(), transport);
        match input {
            StationInput::Sample(s) => {
                for ev in self.engine.ingest(s) {
                    self.orch.on_weighing_event(ev);
                }
            }
            StationInput::Detection(d) => {
                if !self.orch.rfid_down {
                    self.orch.on_detection(d);
                }
            }
            StationInput::Frame { ts, frame } => {
                if !self.orch.rfid_down {
                    self.orch.on_frame(ts, &frame);
                }
            }
            StationInput::RfidFault { down, .. } => self.orch.set_rfid_down(down),
            StationInput::Env { reading, .. } => self.orch.set_env(reading),
            StationInput::OperatorReset { .. } => self.orch.operator_reset(),
        }
    }

    /// Feed time-ordered inputs up to `duration_ms`, then shut down: finish
    /// the last episode, stop periodic uplinks and drain the queue for at
    /// most `drain_ms`.
    pub fn run(
        &mut self,
        inputs: impl IntoIterator<Item = StationInput>,
        transport: &mut dyn Transport,
        duration_ms: i64,
        drain_ms: i64,
    ) -> RunSummary {
        for input in inputs {
            if input.ts() > duration_ms {
                break;
            }
            self.handle(input, transport);
        }
        self.orch.advance_to(duration_ms, transport);
        self.shutdown(transport, duration_ms + drain_ms)
    }

    pub fn shutdown(&mut self, transport: &mut dyn Transport, deadline: i64) -> RunSummary {
        for ev in self.engine.flush() {
            self.orch.on_weighing_event(ev);
        }
        self.orch.stop_periodic();
        self.orch.release_all();
        let drained = self.orch.drain(transport, deadline);
        summarize(&self.orch, drained)
    }
}

fn summarize<S: LogStorage>(orch: &Orchestrator<S>, drained: bool) -> RunSummary {
    use codec::MessageType as T;
    let log = orch.log();
    RunSummary {
        system_updates: log.count(T::SystemUpdate),
        animal_updates: log.count(T::AnimalUpdate),
        trap_events: log.count(T::TrapEvent),
        db_syncs: log.count(T::DbSyncRequest),
        visits: log.visits.len(),
        captures: log.captures.len(),
        drained,
        queue_left: orch.queue().len(),
        parked: orch.queue().parked().len(),
        end_ms: orch.now(),
    }
}
