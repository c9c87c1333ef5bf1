//! Telemetry backend logic: ingestion with deduplication, persistence,
//! trap-target ledgers and the visit query/export used by the HTTP layer.

mod ledger;
mod query;
mod storage;

pub use ledger::{LedgerChange, TargetOp, TrapLedger};
pub use query::{FilterError, StoredVisit, ValidFilter, VisitFilter, VisitKey, VisitPage, CSV_HEADER, DEFAULT_PAGE, MAX_PAGE};
pub use storage::{JsonlStorage, MemoryStorage, QuarantineRow, Storage, StorageError, StoredRecord};

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::ops::Bound;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Downlink, ErrorFlags, Message, Uplink};
use crate::rfid::TagId;

pub trait Clock: Send + Sync {
    /// Unix seconds.
    fn now(&self) -> u32;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u32 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as u32)
    }
}

/// Settable clock for tests and simulation. Clones share the time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU32>);

impl ManualClock {
    pub fn new(now: u32) -> Self {
        Self(Arc::new(AtomicU32::new(now)))
    }

    pub fn set(&self, now: u32) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u32) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u32 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("csv export failed: {0}")]
    Export(#[from] csv::Error),
    #[error("stored payload is no longer decodable: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    /// Confirm the uplink to the station.
    pub ack: bool,
    pub duplicate: bool,
    /// Encoded downlink to deliver with the confirmation.
    pub downlink: Option<Vec<u8>>,
    /// Why the payload was quarantined.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStatus {
    pub seq: u16,
    pub ts: u32,
    pub temp_in_c: f64,
    pub temp_out_c: f64,
    pub rh_in_pct: f64,
    pub rh_out_pct: f64,
    pub error_flags: u16,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRow {
    pub station_id: u16,
    pub seq: u16,
    pub ts: u32,
    pub tag: Option<TagId>,
    pub received_ts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStatus {
    pub station_id: u16,
    pub last_seen: Option<u32>,
    pub system: Option<SystemStatus>,
    pub system_updates: usize,
    pub visits: usize,
    pub captures: usize,
    /// `last_updated` from the station's latest sync request.
    pub trap_last_updated: Option<u32>,
    pub targets: Vec<TagId>,
    pub master: bool,
    /// Ledger changes the station has not confirmed seeing.
    pub pending_changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub server_time: u32,
    pub stations: Vec<StationStatus>,
    pub captures: Vec<CaptureRow>,
    pub quarantined: usize,
}

#[derive(Debug, Default)]
struct StationState {
    last_seen: Option<u32>,
    system: Option<SystemStatus>,
    system_updates: usize,
    visits: usize,
    captures: usize,
    trap_last_updated: Option<u32>,
    ledger: TrapLedger,
    /// Last accepted payload per sequence number.
    seen: HashMap<u16, Vec<u8>>,
    /// Downlink answered to a sequence number, resent on duplicates.
    responses: HashMap<u16, Vec<u8>>,
}

pub struct Server<S: Storage = MemoryStorage, C: Clock = SystemClock> {
    storage: S,
    clock: C,
    stations: BTreeMap<u16, StationState>,
    visits: BTreeMap<VisitKey, StoredVisit>,
    captures: Vec<CaptureRow>,
    quarantine: Vec<QuarantineRow>,
    next_id: u64,
}

impl<S: Storage, C: Clock> std::fmt::Debug for Server<S, C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server")
            .field("stations", &self.stations.len())
            .field("visits", &self.visits.len())
            .finish()
    }
}

impl<S: Storage, C: Clock> Server<S, C> {
    /// Open over `storage`, replaying whatever it holds.
    pub fn open(mut storage: S, clock: C) -> Result<Self, ServerError> {
        let records = storage.load()?;
        let mut server = Self {
            storage,
            clock,
            stations: BTreeMap::new(),
            visits: BTreeMap::new(),
            captures: Vec::new(),
            quarantine: Vec::new(),
            next_id: 0,
        };
        let n = records.len();
        for r in records {
            server.replay(r)?;
        }
        if n > 0 {
            info!("server state rebuilt from {n} records: {} visits", server.visits.len());
        }
        Ok(server)
    }

    fn replay(&mut self, r: StoredRecord) -> Result<(), ServerError> {
        match r {
            StoredRecord::Uplink { station_id, received_ts, payload_hex } => {
                let bytes = codec::from_hex(&payload_hex).map_err(|e| ServerError::Replay(e.to_string()))?;
                let msg = codec::decode(&bytes).map_err(|e| ServerError::Replay(e.to_string()))?;
                let Message::Uplink(u) = msg else {
                    return Err(ServerError::Replay("downlink stored as uplink".into()));
                };
                self.station(station_id).seen.insert(u.seq(), bytes);
                self.apply(station_id, &u, received_ts);
            }
            StoredRecord::Quarantine(q) => self.quarantine.push(q),
            StoredRecord::Ledger { station_id, change } => self.station(station_id).ledger.restore(change),
            StoredRecord::Issued { station_id, server_time } => {
                self.station(station_id).ledger.note_issued(server_time)
            }
        }
        Ok(())
    }

    fn station(&mut self, id: u16) -> &mut StationState {
        self.stations.entry(id).or_default()
    }

    pub fn now(&self) -> u32 {
        self.clock.now()
    }

    /// Handle one uplink payload as delivered by the network.
    pub fn ingest(&mut self, station_id: u16, payload: &[u8]) -> Result<IngestOutcome, ServerError> {
        let now = self.clock.now();
        let uplink = match codec::decode(payload) {
            Ok(Message::Uplink(u)) => u,
            Ok(Message::Downlink(_)) => return self.reject(station_id, payload, now, "downlink type on uplink".into()),
            Err(e) => return self.reject(station_id, payload, now, e.to_string()),
        };
        let seq = uplink.seq();
        let st = self.station(station_id);
        st.last_seen = Some(now);
        if st.seen.get(&seq).is_some_and(|p| p == payload) {
            debug!("duplicate uplink station {station_id} seq {seq}");
            return Ok(IngestOutcome {
                ack: true,
                duplicate: true,
                downlink: st.responses.get(&seq).cloned(),
                error: None,
            });
        }
        self.storage.append(&StoredRecord::Uplink {
            station_id,
            received_ts: now,
            payload_hex: codec::to_hex(payload),
        })?;
        let st = self.station(station_id);
        st.seen.insert(seq, payload.to_vec());
        st.responses.remove(&seq);
        self.apply(station_id, &uplink, now);
        let downlink = match &uplink {
            Uplink::DbSync(req) => {
                let update = self.station(station_id).ledger.delta(req.last_updated, now);
                self.storage.append(&StoredRecord::Issued { station_id, server_time: update.server_time })?;
                let bytes = codec::encode(&Message::Downlink(Downlink::TrapUpdate(update)))
                    .expect("ledger deltas are sized to fit one downlink");
                self.station(station_id).responses.insert(seq, bytes.clone());
                Some(bytes)
            }
            _ => None,
        };
        Ok(IngestOutcome { ack: true, duplicate: false, downlink, error: None })
    }

    fn reject(&mut self, station_id: u16, payload: &[u8], now: u32, error: String) -> Result<IngestOutcome, ServerError> {
        warn!("quarantined payload from station {station_id}: {error}");
        let row = QuarantineRow { station_id, received_ts: now, payload_hex: codec::to_hex(payload), error: error.clone() };
        self.storage.append(&StoredRecord::Quarantine(row.clone()))?;
        self.quarantine.push(row);
        Ok(IngestOutcome { ack: false, duplicate: false, downlink: None, error: Some(error) })
    }

    fn apply(&mut self, station_id: u16, u: &Uplink, received_ts: u32) {
        match u {
            Uplink::System(m) => {
                let flags = m.error_flags;
                let st = self.station(station_id);
                st.system_updates += 1;
                st.system = Some(SystemStatus {
                    seq: m.seq,
                    ts: m.ts,
                    temp_in_c: m.temp_in_dc as f64 / 10.0,
                    temp_out_c: m.temp_out_dc as f64 / 10.0,
                    rh_in_pct: m.rh_in_dpct as f64 / 10.0,
                    rh_out_pct: m.rh_out_dpct as f64 / 10.0,
                    error_flags: flags.0,
                    errors: ErrorFlags::names(flags).into_iter().map(String::from).collect(),
                });
            }
            Uplink::Animal(m) => {
                let id = self.next_id;
                self.next_id += 1;
                let key = VisitKey { entry_ts: m.entry_ts, station_id, seq: m.seq, id };
                self.visits.insert(
                    key,
                    StoredVisit {
                        station_id,
                        seq: m.seq,
                        tag: m.tag,
                        entry_ts: m.entry_ts,
                        exit_ts: m.exit_ts,
                        weight_grams: m.weight_grams(),
                        std_grams: m.std_grams(),
                        flags: m.flags,
                        received_ts,
                    },
                );
                self.station(station_id).visits += 1;
            }
            Uplink::DbSync(m) => self.station(station_id).trap_last_updated = Some(m.last_updated),
            Uplink::Trap(m) => {
                info!("capture at station {station_id}: {:?}", m.tag.map(|t| t.to_string()));
                self.captures.push(CaptureRow { station_id, seq: m.seq, ts: m.ts, tag: m.tag, received_ts });
                self.station(station_id).captures += 1;
            }
        }
    }

    /// Record operator edits; each gets its own ledger timestamp.
    pub fn set_trap_targets(
        &mut self,
        station_id: u16,
        ops: &[TargetOp],
        operator: &str,
    ) -> Result<Vec<LedgerChange>, ServerError> {
        let now = self.clock.now();
        let mut out = Vec::with_capacity(ops.len());
        for &op in ops {
            let change = self.station(station_id).ledger.record(op, operator, now);
            self.storage.append(&StoredRecord::Ledger { station_id, change: change.clone() })?;
            out.push(change);
        }
        Ok(out)
    }

    /// The downlink a station reporting `last_updated` would receive now.
    pub fn trap_delta(&mut self, station_id: u16, last_updated: u32) -> Result<codec::TrapUpdate, ServerError> {
        let now = self.clock.now();
        let Some(st) = self.stations.get_mut(&station_id) else {
            return Ok(codec::TrapUpdate { server_time: now, master: None, more_follows: false, part: 0, ops: vec![] });
        };
        let update = st.ledger.delta(last_updated, now);
        self.storage.append(&StoredRecord::Issued { station_id, server_time: update.server_time })?;
        Ok(update)
    }

    pub fn ledger(&self, station_id: u16) -> Option<&TrapLedger> {
        self.stations.get(&station_id).map(|s| &s.ledger)
    }

    /// Current target set and master flag.
    pub fn targets(&self, station_id: u16) -> (Vec<TagId>, bool) {
        self.stations.get(&station_id).map_or((Vec::new(), false), |s| {
            let (set, master) = s.ledger.current();
            (set.into_iter().collect(), master)
        })
    }

    pub fn query_visits(
        &self,
        filter: &VisitFilter,
        cursor: Option<&str>,
        limit: Option<usize>,
    ) -> Result<VisitPage, FilterError> {
        let f = filter.validate()?;
        let limit = limit.unwrap_or(DEFAULT_PAGE);
        if !(1..=MAX_PAGE).contains(&limit) {
            return Err(FilterError::Limit(limit));
        }
        let start = match cursor {
            Some(c) if !c.is_empty() => Bound::Excluded(c.parse::<VisitKey>()?),
            _ => Bound::Unbounded,
        };
        let mut visits = Vec::with_capacity(limit);
        let mut last = None;
        let mut more = false;
        for (k, v) in self.visits.range((start, Bound::Unbounded)).filter(|(_, v)| f.matches(v)) {
            if visits.len() == limit {
                more = true;
                break;
            }
            visits.push(v.clone());
            last = Some(*k);
        }
        Ok(VisitPage { visits, next_cursor: if more { last.map(|k| k.to_string()) } else { None } })
    }

    /// Write matching visits as CSV, row by row. Returns the row count.
    pub fn export_csv<W: Write>(&self, filter: &VisitFilter, out: W) -> Result<usize, ServerError> {
        let f = filter.validate()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let mut n = 0;
        for v in self.visits.values().filter(|v| f.matches(v)) {
            w.write_record(query::csv_record(v))?;
            n += 1;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(n)
    }

    /// One page of CSV rows without the header, for streaming responses.
    pub fn export_csv_page(
        &self,
        filter: &VisitFilter,
        cursor: Option<&str>,
        with_header: bool,
    ) -> Result<(Vec<u8>, Option<String>), ServerError> {
        let page = self.query_visits(filter, cursor, Some(MAX_PAGE))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        if with_header {
            w.write_record(CSV_HEADER)?;
        }
        for v in &page.visits {
            w.write_record(query::csv_record(v))?;
        }
        let bytes = w.into_inner().map_err(|e| ServerError::Export(csv::Error::from(e.into_error())))?;
        Ok((bytes, page.next_cursor))
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }

    pub fn visits(&self) -> impl Iterator<Item = &StoredVisit> {
        self.visits.values()
    }

    pub fn captures(&self) -> &[CaptureRow] {
        &self.captures
    }

    pub fn quarantined(&self) -> &[QuarantineRow] {
        &self.quarantine
    }

    pub fn station_status(&self, station_id: u16) -> Option<StationStatus> {
        let s = self.stations.get(&station_id)?;
        let (targets, master) = s.ledger.current();
        Some(StationStatus {
            station_id,
            last_seen: s.last_seen,
            system: s.system.clone(),
            system_updates: s.system_updates,
            visits: s.visits,
            captures: s.captures,
            trap_last_updated: s.trap_last_updated,
            targets: targets.into_iter().collect(),
            master,
            pending_changes: s.ledger.pending_after(s.trap_last_updated.unwrap_or(0)),
        })
    }

    pub fn status(&self) -> StatusReport {
        StatusReport {
            server_time: self.clock.now(),
            stations: self.stations.keys().filter_map(|&id| self.station_status(id)).collect(),
            captures: self.captures.clone(),
            quarantined: self.quarantine.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{AnimalUpdate, DbSyncRequest, SystemUpdate, TrapEvent, TrapUpdate};
    use crate::trapctl::TrapDatabase;
    use crate::weighing::VisitFlags;

    fn server() -> (Server<MemoryStorage, ManualClock>, ManualClock) {
        let clock = ManualClock::new(1_700_000_000);
        (Server::open(MemoryStorage::new(), clock.clone()).unwrap(), clock)
    }

    fn tag(n: u64) -> TagId {
        TagId::new(756, n).unwrap()
    }

    fn animal(seq: u16, t: Option<TagId>, entry: u32, weight_dg: u32) -> Vec<u8> {
        codec::encode_uplink(&Uplink::Animal(AnimalUpdate {
            seq,
            tag: t,
            entry_ts: entry,
            exit_ts: entry + 30,
            weight_dg,
            std_dg: 2,
            flags: VisitFlags::default(),
        }))
        .unwrap()
    }

    fn sync(seq: u16, last: u32) -> Vec<u8> {
        codec::encode_uplink(&Uplink::DbSync(DbSyncRequest { seq, last_updated: last })).unwrap()
    }

    fn downlink(out: &IngestOutcome) -> TrapUpdate {
        match codec::decode(out.downlink.as_ref().unwrap()).unwrap() {
            Message::Downlink(Downlink::TrapUpdate(t)) => t,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_is_stored_once() {
        let (mut s, _) = server();
        let p = animal(1, Some(tag(1)), 100, 400);
        let a = s.ingest(1, &p).unwrap();
        let b = s.ingest(1, &p).unwrap();
        assert!(a.ack && b.ack && !a.duplicate && b.duplicate);
        assert_eq!(s.visit_count(), 1);
        // same seq from another station is a different message
        s.ingest(2, &p).unwrap();
        assert_eq!(s.visit_count(), 2);
    }

    #[test]
    fn wrapped_seq_with_new_payload_is_new() {
        let (mut s, _) = server();
        s.ingest(1, &animal(5, None, 100, 400)).unwrap();
        let out = s.ingest(1, &animal(5, None, 9_000, 410)).unwrap();
        assert!(!out.duplicate);
        assert_eq!(s.visit_count(), 2);
    }

    #[test]
    fn garbage_is_quarantined() {
        let (mut s, _) = server();
        let out = s.ingest(1, &[0xff, 0x00]).unwrap();
        assert!(!out.ack);
        assert_eq!(s.quarantined().len(), 1);
        assert_eq!(s.quarantined()[0].payload_hex, "ff00");
        let down = codec::encode_trap_update(&TrapUpdate {
            server_time: 1,
            master: None,
            more_follows: false,
            part: 0,
            ops: vec![],
        })
        .unwrap();
        assert!(!s.ingest(1, &down).unwrap().ack);
    }

    #[test]
    fn sync_round_trip_with_retry() {
        let (mut s, clock) = server();
        let ops: Vec<TargetOp> = (0..12).map(|n| TargetOp::Add { tag: tag(n) }).collect();
        s.set_trap_targets(3, &ops, "keeper").unwrap();
        clock.advance(60);
        let mut db = TrapDatabase::new();
        let first = s.ingest(3, &sync(0, 0)).unwrap();
        let u = downlink(&first);
        assert_eq!((u.ops.len(), u.more_follows), (8, true));
        // ack lost: the station resends the same request and gets the same bytes
        let again = s.ingest(3, &sync(0, 0)).unwrap();
        assert!(again.duplicate);
        assert_eq!(again.downlink, first.downlink);
        db.apply_trap_update(&u);
        let u2 = downlink(&s.ingest(3, &sync(1, db.last_updated())).unwrap());
        assert_eq!((u2.ops.len(), u2.more_follows, u2.part), (4, false, 1));
        db.apply_trap_update(&u2);
        assert_eq!(db.entries().copied().collect::<Vec<_>>(), s.targets(3).0);
        // the server learns what the station holds from its next request
        assert_eq!(s.station_status(3).unwrap().pending_changes, 4);
        let u3 = downlink(&s.ingest(3, &sync(2, db.last_updated())).unwrap());
        assert!(u3.ops.is_empty());
        assert_eq!(s.station_status(3).unwrap().pending_changes, 0);
    }

    #[test]
    fn unknown_station_gets_empty_update() {
        let (mut s, clock) = server();
        let u = s.trap_delta(42, 0).unwrap();
        assert_eq!((u.server_time, u.ops.len()), (clock.now(), 0));
    }

    #[test]
    fn master_toggle_in_downlink() {
        let (mut s, _) = server();
        s.set_trap_targets(1, &[TargetOp::Master { enabled: true }], "keeper").unwrap();
        let u = downlink(&s.ingest(1, &sync(0, 10)).unwrap());
        assert_eq!(u.master, Some(true));
    }

    #[test]
    fn status_and_captures() {
        let (mut s, _) = server();
        let sys = codec::encode_uplink(&Uplink::System(SystemUpdate {
            seq: 0,
            ts: 5,
            temp_in_dc: 215,
            temp_out_dc: -50,
            rh_in_dpct: 455,
            rh_out_dpct: 800,
            error_flags: ErrorFlags::RFID_FAULT,
        }))
        .unwrap();
        s.ingest(1, &sys).unwrap();
        let cap = codec::encode_uplink(&Uplink::Trap(TrapEvent { seq: 1, ts: 9, tag: Some(tag(4)) })).unwrap();
        s.ingest(1, &cap).unwrap();
        let st = s.status();
        assert_eq!(st.stations.len(), 1);
        let sys = st.stations[0].system.as_ref().unwrap();
        assert_eq!((sys.temp_in_c, sys.temp_out_c, sys.rh_in_pct), (21.5, -5.0, 45.5));
        assert_eq!(sys.errors, vec!["rfid"]);
        assert_eq!(st.captures[0].tag, Some(tag(4)));
    }

    #[test]
    fn query_pages_and_filters() {
        let (mut s, _) = server();
        for i in 0..25u16 {
            let t = if i % 2 == 0 { Some(tag(1)) } else { Some(tag(2)) };
            s.ingest(1, &animal(i, t, 1000 + (i as u32 % 5) * 10, 350 + i as u32 * 5)).unwrap();
        }
        let mut all = Vec::new();
        let mut cursor = None;
        loop {
            let page = s.query_visits(&VisitFilter::default(), cursor.as_deref(), Some(10)).unwrap();
            all.extend(page.visits);
            match page.next_cursor {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        assert_eq!(all.len(), 25);
        assert!(all.windows(2).all(|w| (w[0].entry_ts, w[0].seq) <= (w[1].entry_ts, w[1].seq)));

        let one_tag = VisitFilter { tag: Some(tag(1).to_string()), ..Default::default() };
        let page = s.query_visits(&one_tag, None, Some(100)).unwrap();
        assert_eq!(page.visits.len(), 13);
        assert!(page.visits.iter().all(|v| v.tag == Some(tag(1))));

        let band = VisitFilter { min_weight: Some(35.0), max_weight: Some(45.0), ..Default::default() };
        let page = s.query_visits(&band, None, None).unwrap();
        assert!(page.visits.iter().all(|v| (35.0..=45.0).contains(&v.weight_grams)));
        assert_eq!(page.visits.len(), 21);

        assert_eq!(s.query_visits(&VisitFilter::default(), None, Some(0)), Err(FilterError::Limit(0)));
        assert!(s.query_visits(&VisitFilter::default(), Some("junk"), None).is_err());
    }

    #[test]
    fn export_matches_query() {
        let (mut s, _) = server();
        assert_eq!(s.query_visits(&VisitFilter::default(), None, None).unwrap().visits.len(), 0);
        s.ingest(1, &animal(0, Some(tag(7)), 100, 412)).unwrap();
        s.ingest(1, &animal(1, None, 200, 388)).unwrap();
        s.ingest(2, &animal(0, Some(tag(8)), 150, 1_001)).unwrap();
        let mut a = Vec::new();
        assert_eq!(s.export_csv(&VisitFilter::default(), &mut a).unwrap(), 3);
        let text = String::from_utf8(a.clone()).unwrap();
        assert_eq!(
            text,
            "station_id,seq,tag,entry_ts,exit_ts,weight_g,std_g\n\
             1,0,756_000000000007,100,130,41.2,0.2\n\
             2,0,756_000000000008,150,180,100.1,0.2\n\
             1,1,,200,230,38.8,0.2\n"
        );
        let mut b = Vec::new();
        s.export_csv(&VisitFilter::default(), &mut b).unwrap();
        assert_eq!(a, b);
        let (page, next) = s.export_csv_page(&VisitFilter::default(), None, true).unwrap();
        assert_eq!(page, a);
        assert_eq!(next, None);
    }

    #[test]
    fn rebuilds_from_storage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.jsonl");
        let clock = ManualClock::new(1_000);
        {
            let mut s = Server::open(JsonlStorage::new(&path), clock.clone()).unwrap();
            s.ingest(1, &animal(0, Some(tag(7)), 100, 412)).unwrap();
            s.ingest(1, &[0x00]).unwrap();
            s.set_trap_targets(1, &[TargetOp::Add { tag: tag(3) }], "keeper").unwrap();
            s.ingest(1, &sync(1, 0)).unwrap();
        }
        let mut s = Server::open(JsonlStorage::new(&path), clock.clone()).unwrap();
        assert_eq!(s.visit_count(), 1);
        assert_eq!(s.quarantined().len(), 1);
        assert_eq!(s.targets(1).0, vec![tag(3)]);
        assert!(s.ingest(1, &animal(0, Some(tag(7)), 100, 412)).unwrap().duplicate);
        // issued time survived: a new change lands after it
        let c = s.set_trap_targets(1, &[TargetOp::Add { tag: tag(4) }], "keeper").unwrap();
        assert!(c[0].change_ts > 1_000);
    }
}
