//! Selective trapping: the station's trap database, the capture decision and
//! a step-level simulator for the coupled entry/trap doors.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use log::{info, warn};
use thiserror::Error;

use crate::codec::{TagOpKind, TrapUpdate};
use crate::rfid::{RfidDetection, TagId};

const DB_HEADER: &str = "feedstation-trapdb v1";

#[derive(Debug, Error)]
pub enum TrapDbError {
    #[error("trap database line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    /// The update predates the database and was ignored.
    Stale,
}

/// Tags that close the trap when read, plus the master entry for
/// untagged animals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrapDatabase {
    entries: BTreeSet<TagId>,
    master: bool,
    last_updated: u32,
    /// Set while the server has announced further parts of a delta.
    more_pending: bool,
}

impl TrapDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, tag: &TagId) -> bool {
        self.entries.contains(tag)
    }

    pub fn entries(&self) -> impl Iterator<Item = &TagId> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn master(&self) -> bool {
        self.master
    }

    pub fn last_updated(&self) -> u32 {
        self.last_updated
    }

    /// The last applied update announced that more parts follow.
    pub fn more_pending(&self) -> bool {
        self.more_pending
    }

    pub fn apply_trap_update(&mut self, update: &TrapUpdate) -> ApplyOutcome {
        if update.server_time < self.last_updated {
            warn!(
                "ignoring stale trap update: server_time {} < last_updated {}",
                update.server_time, self.last_updated
            );
            return ApplyOutcome::Stale;
        }
        for op in &update.ops {
            match op.kind {
                TagOpKind::Add => self.entries.insert(op.tag),
                TagOpKind::Remove => self.entries.remove(&op.tag),
            };
        }
        if let Some(m) = update.master {
            self.master = m;
        }
        self.last_updated = update.server_time;
        self.more_pending = update.more_follows;
        ApplyOutcome::Applied
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{DB_HEADER}\nmaster {}\nlast_updated {}\nmore_pending {}\n",
            self.master as u8, self.last_updated, self.more_pending as u8
        );
        for t in &self.entries {
            s.push_str(&t.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TrapDbError> {
        let err = |line: usize, message: String| TrapDbError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, DB_HEADER)) => {}
            Some((n, other)) => return Err(err(n, format!("unsupported header {other:?}"))),
            None => return Err(err(1, "empty file".into())),
        }
        let mut db = TrapDatabase::new();
        let mut seen_master = false;
        let mut seen_updated = false;
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once(' ') {
                let flag = || match value.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    v => Err(err(n, format!("expected 0 or 1, got {v:?}"))),
                };
                match key {
                    "master" => {
                        db.master = flag()?;
                        seen_master = true;
                    }
                    "more_pending" => db.more_pending = flag()?,
                    "last_updated" => {
                        db.last_updated = value.trim().parse().map_err(|e| err(n, format!("last_updated: {e}")))?;
                        seen_updated = true;
                    }
                    _ => return Err(err(n, format!("unknown key {key:?}"))),
                }
                continue;
            }
            let tag: TagId = line.parse().map_err(|e| err(n, format!("{e}")))?;
            db.entries.insert(tag);
        }
        if !seen_master || !seen_updated {
            return Err(err(0, "missing master or last_updated".into()));
        }
        Ok(db)
    }

    /// Write through a temporary file and rename, so a power cut leaves
    /// either the old or the new database.
    pub fn save(&self, path: &Path) -> Result<(), TrapDbError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a saved database; a missing file yields an empty database.
    pub fn load(path: &Path) -> Result<Self, TrapDbError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_text(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }
}

/// Capture decision. An entrance counts as untagged when no tag was read
/// inside the matching window around it.
pub fn should_trap(db: &TrapDatabase, detection: Option<&RfidDetection>, untagged_entrance: bool) -> bool {
    match detection {
        Some(d) => db.contains(&d.tag),
        None => untagged_entrance && db.master,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DoorState {
    EntryOpenTrapClosed,
    EntryClosedTrapOpen,
    /// Fraction of the travel between the two positions, 0..=1.
    Moving { progress: f64 },
    Fault,
}

impl DoorState {
    /// Number of open tubes, when the doors are at rest.
    pub fn open_tubes(&self) -> Option<u8> {
        match self {
            DoorState::EntryOpenTrapClosed | DoorState::EntryClosedTrapOpen => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorCommand {
    OpenTrap,
    Reset,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DoorError {
    #[error("door is in fault state")]
    Faulted,
    #[error("proximity switch did not confirm the home position")]
    NoProximity,
    #[error("proximity switch never triggered within one revolution")]
    CalibrationFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoorConfig {
    pub steps_per_rev: u32,
    /// Steps between entry-open and trap-open. The disc keeps turning the
    /// same way, so a reset travels the remaining half back to home.
    pub travel_steps: u32,
    pub step_rate_hz: f64,
}

impl Default for DoorConfig {
    fn default() -> Self {
        Self { steps_per_rev: 200, travel_steps: 100, step_rate_hz: 400.0 }
    }
}

/// One motor step as recorded by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoorStep {
    pub t_ms: f64,
    pub state: DoorState,
    pub proximity: bool,
    /// The spring yielded against an obstruction during this step.
    pub torque_limited: bool,
}

/// Stepper-driven coupled doors with a proximity switch at home.
#[derive(Debug, Clone)]
pub struct DoorSim {
    cfg: DoorConfig,
    position: u32,
    state: DoorState,
    switch_stuck_off: bool,
    /// Obstruction that will hold the door for this many step periods the
    /// next time it moves.
    obstruction_steps: u32,
}

impl DoorSim {
    pub fn new(cfg: DoorConfig) -> Self {
        Self { cfg, position: 0, state: DoorState::EntryOpenTrapClosed, switch_stuck_off: false, obstruction_steps: 0 }
    }

    /// A door left at an unknown offset, e.g. after a power cut mid-travel.
    pub fn at_offset(cfg: DoorConfig, offset_steps: u32) -> Self {
        let position = offset_steps % cfg.steps_per_rev;
        let mut d = Self::new(cfg);
        d.position = position;
        d.state = d.state_at(position);
        d
    }

    pub fn state(&self) -> DoorState {
        self.state
    }

    pub fn position(&self) -> u32 {
        self.position
    }

    pub fn config(&self) -> &DoorConfig {
        &self.cfg
    }

    pub fn set_switch_stuck_off(&mut self, stuck: bool) {
        self.switch_stuck_off = stuck;
    }

    pub fn obstruct(&mut self, steps: u32) {
        self.obstruction_steps = steps;
    }

    fn proximity(&self) -> bool {
        !self.switch_stuck_off && self.position == 0
    }

    fn state_at(&self, position: u32) -> DoorState {
        match position {
            0 => DoorState::EntryOpenTrapClosed,
            p if p == self.cfg.travel_steps => DoorState::EntryClosedTrapOpen,
            p => {
                let leg = if p < self.cfg.travel_steps {
                    p
                } else {
                    p - self.cfg.travel_steps
                };
                let len = if p < self.cfg.travel_steps {
                    self.cfg.travel_steps
                } else {
                    self.cfg.steps_per_rev - self.cfg.travel_steps
                };
                DoorState::Moving { progress: leg as f64 / len as f64 }
            }
        }
    }

    fn step(&mut self, t: &mut f64, log: &mut Vec<DoorStep>) {
        let period = 1000.0 / self.cfg.step_rate_hz;
        while self.obstruction_steps > 0 {
            self.obstruction_steps -= 1;
            *t += period;
            log.push(DoorStep { t_ms: *t, state: self.state, proximity: self.proximity(), torque_limited: true });
        }
        self.position = (self.position + 1) % self.cfg.steps_per_rev;
        *t += period;
        self.state = self.state_at(self.position);
        log.push(DoorStep { t_ms: *t, state: self.state, proximity: self.proximity(), torque_limited: false });
    }

    /// Drive the doors to the commanded position. Returns every step taken;
    /// an empty list when already there.
    pub fn actuate(&mut self, cmd: DoorCommand) -> Result<Vec<DoorStep>, DoorError> {
        if self.state == DoorState::Fault {
            return Err(DoorError::Faulted);
        }
        let target = match cmd {
            DoorCommand::OpenTrap => self.cfg.travel_steps,
            DoorCommand::Reset => 0,
        };
        let mut log = Vec::new();
        let mut t = 0.0;
        while self.position != target {
            self.step(&mut t, &mut log);
        }
        if target == 0 && !self.proximity() {
            self.state = DoorState::Fault;
            return Err(DoorError::NoProximity);
        }
        Ok(log)
    }

    /// Rotate until the proximity switch fires and zero the position.
    pub fn calibrate(&mut self) -> Result<Vec<DoorStep>, DoorError> {
        if self.state == DoorState::Fault {
            return Err(DoorError::Faulted);
        }
        let mut log = Vec::new();
        let mut t = 0.0;
        for _ in 0..=self.cfg.steps_per_rev {
            if self.proximity() {
                self.position = 0;
                self.state = DoorState::EntryOpenTrapClosed;
                return Ok(log);
            }
            self.step(&mut t, &mut log);
        }
        self.state = DoorState::Fault;
        Err(DoorError::CalibrationFailed)
    }

    /// Operator intervention after a fault: the position is unknown again.
    pub fn clear_fault(&mut self) {
        if self.state == DoorState::Fault {
            self.state = self.state_at(self.position);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaptureEvent {
    pub tag: Option<TagId>,
    /// Milliseconds, station clock.
    pub ts: i64,
    pub station_id: u16,
}

/// Arms the trap on a positive decision and holds it closed until reset.
#[derive(Debug, Clone)]
pub struct TrapController {
    door: DoorSim,
    station_id: u16,
    last_capture: Option<CaptureEvent>,
}

impl TrapController {
    pub fn new(door: DoorSim, station_id: u16) -> Self {
        Self { door, station_id, last_capture: None }
    }

    pub fn door(&self) -> &DoorSim {
        &self.door
    }

    pub fn door_mut(&mut self) -> &mut DoorSim {
        &mut self.door
    }

    /// Whether a new capture can happen now.
    pub fn armed(&self) -> bool {
        self.door.state() == DoorState::EntryOpenTrapClosed
    }

    pub fn last_capture(&self) -> Option<&CaptureEvent> {
        self.last_capture.as_ref()
    }

    /// Close the entry and open the trap tube. Returns the capture, or
    /// `None` when the trap already fired and awaits a reset.
    pub fn trigger(&mut self, tag: Option<TagId>, ts: i64) -> Result<Option<CaptureEvent>, DoorError> {
        if !self.armed() {
            return Ok(None);
        }
        self.door.actuate(DoorCommand::OpenTrap)?;
        let ev = CaptureEvent { tag, ts, station_id: self.station_id };
        info!("trap closed at {} on {:?}", ts, tag.map(|t| t.to_string()));
        self.last_capture = Some(ev.clone());
        Ok(Some(ev))
    }

    pub fn reset(&mut self) -> Result<(), DoorError> {
        self.door.actuate(DoorCommand::Reset)?;
        Ok(())
    }
}
