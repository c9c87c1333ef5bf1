//! Persistent store-and-forward queue for confirmed uplinks.
//!
//! Entries are sent one at a time, head of line first. An entry stays at
//! the head until the network confirms it; unconfirmed transmissions are
//! repeated with exponential backoff. Every state change is appended to a
//! log before it takes effect in memory, so a restart resumes exactly
//! where the last durable record left off.
//!
//! Log format (little-endian): the magic `FSQ1`, then records of
//! `len: u32 | kind: u8 | seq: u16 | ts: i64 | payload | crc32: u32`
//! where `len` counts kind through payload and the CRC covers the same
//! bytes.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{debug, warn};
use rand::Rng;
use thiserror::Error;

use crate::codec::MAX_PAYLOAD;

const MAGIC: &[u8; 4] = b"FSQ1";
const RECORD_HEADER: usize = 1 + 2 + 8;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("all 65536 sequence numbers are in use")]
    Full,
    #[error("queue storage failed: {0}")]
    Storage(#[from] io::Error),
    #[error("queue log is not a queue log (bad magic)")]
    BadMagic,
}

/// Byte-level persistence behind the queue log.
pub trait LogStorage: Send {
    fn read_all(&mut self) -> io::Result<Vec<u8>>;
    /// Append and make durable before returning.
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// Atomically replace the whole log.
    fn replace(&mut self, bytes: &[u8]) -> io::Result<()>;
}

/// Queue log in a file, synced on every append.
#[derive(Debug)]
pub struct FileStorage {
    path: PathBuf,
    file: Option<File>,
}

impl FileStorage {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), file: None }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogStorage for FileStorage {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        match File::open(&self.path) {
            Ok(mut f) => {
                f.read_to_end(&mut buf)?;
                Ok(buf)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(buf),
            Err(e) => Err(e),
        }
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        if self.file.is_none() {
            self.file = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        let f = self.file.as_mut().expect("opened above");
        f.write_all(bytes)?;
        f.sync_data()
    }

    fn replace(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file = None;
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)
    }
}

#[derive(Debug, Default)]
struct MemInner {
    bytes: Vec<u8>,
    /// Remaining bytes that may still be written before the simulated
    /// power cut; `None` means no crash is scheduled.
    budget: Option<usize>,
    fail_writes: bool,
}

/// In-memory log for tests and simulation. Clones share the same bytes,
/// so a queue can be dropped ("crash") and reopened from a clone.
#[derive(Debug, Clone, Default)]
pub struct MemStorage {
    inner: Arc<Mutex<MemInner>>,
}

impl MemStorage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Let only `bytes` more bytes reach storage; the write that crosses
    /// the limit is torn and fails, as do all later writes.
    pub fn crash_after(&self, bytes: usize) {
        self.inner.lock().unwrap().budget = Some(bytes);
    }

    /// Make every write fail until restored.
    pub fn set_failing(&self, failing: bool) {
        self.inner.lock().unwrap().fail_writes = failing;
    }

    /// Power back on: clear any scheduled crash.
    pub fn restore(&self) {
        let mut g = self.inner.lock().unwrap();
        g.budget = None;
        g.fail_writes = false;
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.inner.lock().unwrap().bytes.clone()
    }
}

fn power_cut() -> io::Error {
    io::Error::other("simulated power loss")
}

impl LogStorage for MemStorage {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        Ok(self.bytes())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        let mut g = self.inner.lock().unwrap();
        if g.fail_writes {
            return Err(io::Error::other("storage unavailable"));
        }
        match g.budget {
            Some(b) if b < bytes.len() => {
                g.bytes.extend_from_slice(&bytes[..b]);
                g.budget = Some(0);
                g.fail_writes = true;
                Err(power_cut())
            }
            Some(b) => {
                g.budget = Some(b - bytes.len());
                g.bytes.extend_from_slice(bytes);
                Ok(())
            }
            None => {
                g.bytes.extend_from_slice(bytes);
                Ok(())
            }
        }
    }

    fn replace(&mut self, bytes: &[u8]) -> io::Result<()> {
        let mut g = self.inner.lock().unwrap();
        if g.fail_writes || g.budget.is_some_and(|b| b < bytes.len()) {
            // rename is atomic: the old log survives
            g.fail_writes = true;
            return Err(power_cut());
        }
        g.bytes = bytes.to_vec();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum RecordKind {
    Enqueue = 1,
    Confirmed = 2,
    Parked = 3,
    NextSeq = 4,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Record {
    kind: RecordKind,
    seq: u16,
    ts: i64,
    payload: Vec<u8>,
}

impl Record {
    fn encode(&self, out: &mut Vec<u8>) {
        let len = (RECORD_HEADER + self.payload.len()) as u32;
        out.extend_from_slice(&len.to_le_bytes());
        let body_start = out.len();
        out.push(self.kind as u8);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.ts.to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out[body_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
}

/// Parse records up to the first torn or corrupt one. Returns the records
/// and the byte length of the valid prefix.
fn parse_log(bytes: &[u8]) -> Result<(Vec<Record>, usize), QueueError> {
    if bytes.is_empty() {
        return Ok((Vec::new(), 0));
    }
    if bytes.len() < MAGIC.len() {
        // crash while writing the magic itself
        return Ok((Vec::new(), 0));
    }
    if &bytes[..4] != MAGIC {
        return Err(QueueError::BadMagic);
    }
    let mut pos = 4;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let Some(len_bytes) = bytes.get(pos..pos + 4) else { break };
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        if !(RECORD_HEADER..=RECORD_HEADER + MAX_PAYLOAD).contains(&len) {
            break;
        }
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else { break };
        let Some(crc_bytes) = bytes.get(pos + 4 + len..pos + 8 + len) else { break };
        if crc32fast::hash(body) != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
            break;
        }
        let kind = match body[0] {
            1 => RecordKind::Enqueue,
            2 => RecordKind::Confirmed,
            3 => RecordKind::Parked,
            4 => RecordKind::NextSeq,
            _ => break,
        };
        out.push(Record {
            kind,
            seq: u16::from_le_bytes([body[1], body[2]]),
            ts: i64::from_le_bytes(body[3..11].try_into().unwrap()),
            payload: body[11..].to_vec(),
        });
        pos += 8 + len;
    }
    if pos < bytes.len() {
        warn!("queue log: discarding {} bytes of torn or corrupt tail", bytes.len() - pos);
    }
    Ok((out, pos))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryState {
    Pending,
    InFlight,
    Confirmed,
    /// Gave up after the configured number of attempts.
    Parked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub seq: u16,
    pub payload: Vec<u8>,
    pub enqueued_ts: i64,
    pub attempts: u32,
    pub state: EntryState,
    /// Earliest next transmission, or the confirmation deadline while in flight.
    pub due_ts: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    pub ack_timeout_ms: i64,
    pub backoff_base_ms: i64,
    pub backoff_cap_ms: i64,
    /// Total transmissions per entry before it is parked; `None` retries forever.
    pub max_attempts: Option<u32>,
    /// Minimum spacing between any two transmissions.
    pub duty_cycle_gap_ms: i64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            ack_timeout_ms: 5_000,
            backoff_base_ms: 5_000,
            backoff_cap_ms: 80_000,
            max_attempts: None,
            duty_cycle_gap_ms: 0,
        }
    }
}

impl QueueConfig {
    /// Wait after the n-th unconfirmed attempt (n ≥ 1).
    pub fn backoff_ms(&self, attempts: u32) -> i64 {
        let shift = attempts.saturating_sub(1).min(20);
        (self.backoff_base_ms.saturating_mul(1 << shift)).min(self.backoff_cap_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueMetrics {
    pub enqueued: u64,
    pub transmissions: u64,
    pub confirmed: u64,
    pub timeouts: u64,
    pub parked: u64,
    pub duplicate_confirms: u64,
    pub unknown_confirms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub seq: u16,
    pub payload: Vec<u8>,
    /// 1 for the first transmission.
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfirmOutcome {
    Confirmed,
    Duplicate,
    Unknown,
}

/// Store-and-forward queue over a [`LogStorage`].
pub struct UplinkQueue<S: LogStorage> {
    cfg: QueueConfig,
    storage: S,
    live: VecDeque<QueueEntry>,
    parked: Vec<QueueEntry>,
    next_seq: u16,
    last_tx: Option<i64>,
    /// Recently confirmed seqs, for telling duplicates from unknowns.
    recent: VecDeque<u16>,
    metrics: QueueMetrics,
    storage_failed: bool,
    /// Records appended since the log was last rewritten.
    appended: usize,
}

impl<S: LogStorage> std::fmt::Debug for UplinkQueue<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UplinkQueue")
            .field("live", &self.live.len())
            .field("parked", &self.parked.len())
            .field("next_seq", &self.next_seq)
            .finish()
    }
}

const RECENT_CONFIRMS: usize = 64;
/// Rewrite the log once it holds this many records beyond the live ones.
const COMPACT_AFTER: usize = 1024;

impl<S: LogStorage> UplinkQueue<S> {
    /// Replay the log, then compact it to the live entries.
    pub fn open(mut storage: S, cfg: QueueConfig) -> Result<Self, QueueError> {
        let bytes = storage.read_all()?;
        let (records, _) = parse_log(&bytes)?;
        let mut live: VecDeque<QueueEntry> = VecDeque::new();
        let mut parked = Vec::new();
        let mut next_seq = 0u16;
        for r in records {
            match r.kind {
                RecordKind::Enqueue => {
                    next_seq = r.seq.wrapping_add(1);
                    live.push_back(QueueEntry {
                        seq: r.seq,
                        payload: r.payload,
                        enqueued_ts: r.ts,
                        attempts: 0,
                        state: EntryState::Pending,
                        due_ts: r.ts,
                    });
                }
                RecordKind::Confirmed => {
                    live.retain(|e| e.seq != r.seq);
                    parked.retain(|e: &QueueEntry| e.seq != r.seq);
                }
                RecordKind::Parked => {
                    if let Some(i) = live.iter().position(|e| e.seq == r.seq) {
                        let mut e = live.remove(i).unwrap();
                        e.state = EntryState::Parked;
                        parked.push(e);
                    }
                }
                RecordKind::NextSeq => next_seq = r.seq,
            }
        }
        let mut q = Self {
            cfg,
            storage,
            live,
            parked,
            next_seq,
            last_tx: None,
            recent: VecDeque::new(),
            metrics: QueueMetrics::default(),
            storage_failed: false,
            appended: 0,
        };
        q.compact()?;
        debug!("queue opened: {} live, {} parked, next seq {}", q.live.len(), q.parked.len(), q.next_seq);
        Ok(q)
    }

    fn compact(&mut self) -> Result<(), QueueError> {
        let mut out = MAGIC.to_vec();
        Record { kind: RecordKind::NextSeq, seq: self.next_seq, ts: 0, payload: vec![] }.encode(&mut out);
        for e in self.parked.iter().chain(self.live.iter()) {
            Record { kind: RecordKind::Enqueue, seq: e.seq, ts: e.enqueued_ts, payload: e.payload.clone() }
                .encode(&mut out);
        }
        // parked entries were enqueued first above; mark them parked again
        for e in &self.parked {
            Record { kind: RecordKind::Parked, seq: e.seq, ts: 0, payload: vec![] }.encode(&mut out);
        }
        Record { kind: RecordKind::NextSeq, seq: self.next_seq, ts: 0, payload: vec![] }.encode(&mut out);
        self.storage.replace(&out).map_err(|e| self.storage_error(e))?;
        self.appended = 0;
        Ok(())
    }

    fn maybe_compact(&mut self) -> Result<(), QueueError> {
        if self.appended >= COMPACT_AFTER + 2 * (self.live.len() + self.parked.len()) {
            debug!("compacting queue log after {} records", self.appended);
            self.compact()?;
        }
        Ok(())
    }

    fn storage_error(&mut self, e: io::Error) -> QueueError {
        self.storage_failed = true;
        QueueError::Storage(e)
    }

    fn append(&mut self, r: Record) -> Result<(), QueueError> {
        let mut buf = Vec::with_capacity(RECORD_HEADER + 8 + r.payload.len());
        r.encode(&mut buf);
        self.storage.append(&buf).map_err(|e| self.storage_error(e))?;
        self.appended += 1;
        Ok(())
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    /// Durably append a payload. Returns its sequence number.
    pub fn enqueue(&mut self, payload: &[u8], now: i64) -> Result<u16, QueueError> {
        self.enqueue_with(now, |_| payload.to_vec())
    }

    /// Like [`enqueue`](Self::enqueue) for payloads that embed their own
    /// sequence number: `build` receives the number the entry will get.
    pub fn enqueue_with(&mut self, now: i64, build: impl FnOnce(u16) -> Vec<u8>) -> Result<u16, QueueError> {
        let seq = self.next_seq;
        if self.live.iter().chain(self.parked.iter()).any(|e| e.seq == seq) {
            return Err(QueueError::Full);
        }
        let payload = build(seq);
        if payload.len() > MAX_PAYLOAD {
            return Err(QueueError::Oversize(payload.len()));
        }
        self.append(Record { kind: RecordKind::Enqueue, seq, ts: now, payload: payload.clone() })?;
        self.next_seq = seq.wrapping_add(1);
        self.live.push_back(QueueEntry {
            seq,
            payload,
            enqueued_ts: now,
            attempts: 0,
            state: EntryState::Pending,
            due_ts: now,
        });
        self.metrics.enqueued += 1;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.live.iter()
    }

    pub fn head(&self) -> Option<&QueueEntry> {
        self.live.front()
    }

    pub fn parked(&self) -> &[QueueEntry] {
        &self.parked
    }

    pub fn metrics(&self) -> QueueMetrics {
        self.metrics
    }

    /// A storage write failed at some point since the queue was opened.
    pub fn storage_failed(&self) -> bool {
        self.storage_failed
    }

    /// Drop parked entries after an operator has looked at them.
    pub fn clear_parked(&mut self) -> Result<usize, QueueError> {
        let seqs: Vec<u16> = self.parked.iter().map(|e| e.seq).collect();
        for &seq in &seqs {
            self.append(Record { kind: RecordKind::Confirmed, seq, ts: 0, payload: vec![] })?;
        }
        self.parked.clear();
        self.maybe_compact()?;
        Ok(seqs.len())
    }

    /// Handle an expired confirmation deadline of the head entry.
    fn expire(&mut self, now: i64) -> Result<(), QueueError> {
        let Some(head) = self.live.front() else { return Ok(()) };
        if head.state != EntryState::InFlight || now < head.due_ts {
            return Ok(());
        }
        self.metrics.timeouts += 1;
        let exhausted = self.cfg.max_attempts.is_some_and(|m| head.attempts >= m);
        if exhausted {
            let seq = head.seq;
            self.append(Record { kind: RecordKind::Parked, seq, ts: now, payload: vec![] })?;
            let mut e = self.live.pop_front().unwrap();
            warn!("uplink {} parked after {} attempts", e.seq, e.attempts);
            e.state = EntryState::Parked;
            self.parked.push(e);
            self.metrics.parked += 1;
        } else {
            let backoff = self.cfg.backoff_ms(head.attempts);
            let head = self.live.front_mut().unwrap();
            head.state = EntryState::Pending;
            head.due_ts += backoff;
        }
        Ok(())
    }

    /// Transmit the head entry if it is due. Timeouts are processed first.
    pub fn poll_transmit(&mut self, now: i64) -> Result<Option<Transmission>, QueueError> {
        self.expire(now)?;
        let gap_ok = self.last_tx.is_none_or(|t| now >= t + self.cfg.duty_cycle_gap_ms);
        let Some(head) = self.live.front_mut() else { return Ok(None) };
        if head.state != EntryState::Pending || now < head.due_ts || !gap_ok {
            return Ok(None);
        }
        head.state = EntryState::InFlight;
        head.attempts += 1;
        head.due_ts = now + self.cfg.ack_timeout_ms;
        self.last_tx = Some(now);
        self.metrics.transmissions += 1;
        Ok(Some(Transmission { seq: head.seq, payload: head.payload.clone(), attempt: head.attempts }))
    }

    /// Next time at which [`poll_transmit`](Self::poll_transmit) may act.
    pub fn next_wakeup(&self) -> Option<i64> {
        let head = self.live.front()?;
        let gap = self.last_tx.map_or(i64::MIN, |t| t + self.cfg.duty_cycle_gap_ms);
        Some(match head.state {
            EntryState::InFlight => head.due_ts,
            _ => head.due_ts.max(gap),
        })
    }

    pub fn confirm(&mut self, seq: u16) -> Result<ConfirmOutcome, QueueError> {
        match self.live.front() {
            Some(h) if h.seq == seq && h.state == EntryState::InFlight => {}
            _ => {
                // a late confirmation of an earlier attempt still counts
                // while the entry waits for its retransmission
                if let Some(h) = self.live.front() {
                    if h.seq == seq && h.attempts > 0 {
                        return self.remove_head(seq);
                    }
                }
                if self.recent.contains(&seq) {
                    self.metrics.duplicate_confirms += 1;
                    return Ok(ConfirmOutcome::Duplicate);
                }
                self.metrics.unknown_confirms += 1;
                return Ok(ConfirmOutcome::Unknown);
            }
        }
        self.remove_head(seq)
    }

    fn remove_head(&mut self, seq: u16) -> Result<ConfirmOutcome, QueueError> {
        self.append(Record { kind: RecordKind::Confirmed, seq, ts: 0, payload: vec![] })?;
        self.live.pop_front();
        self.metrics.confirmed += 1;
        self.recent.push_back(seq);
        if self.recent.len() > RECENT_CONFIRMS {
            self.recent.pop_front();
        }
        self.maybe_compact()?;
        Ok(ConfirmOutcome::Confirmed)
    }
}

impl UplinkQueue<FileStorage> {
    pub fn open_file(path: impl Into<PathBuf>, cfg: QueueConfig) -> Result<Self, QueueError> {
        Self::open(FileStorage::new(path), cfg)
    }
}

/// Radio link between station and network server.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    /// Probability that an uplink never reaches the server.
    pub uplink_drop: f64,
    /// Probability that the confirmation of a received uplink is lost.
    pub ack_drop: f64,
    pub latency_ms: i64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { uplink_drop: 0.0, ack_drop: 0.0, latency_ms: 1_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkOutcome {
    pub delivered: bool,
    pub acked: bool,
}

impl LinkModel {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("uplink_drop", self.uplink_drop), ("ack_drop", self.ack_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be within [0, 1], got {p}"));
            }
        }
        if self.latency_ms < 0 {
            return Err(format!("latency must be non-negative, got {}", self.latency_ms));
        }
        Ok(())
    }

    pub fn transmit<R: Rng + ?Sized>(&self, rng: &mut R) -> LinkOutcome {
        let delivered = !rng.random_bool(self.uplink_drop);
        let acked = delivered && !rng.random_bool(self.ack_drop);
        LinkOutcome { delivered, acked }
    }
}

/// Analytic delivered fraction with `max_attempts` tries at uplink drop `p`.
pub fn delivery_probability(p: f64, max_attempts: u32) -> f64 {
    1.0 - p.powi(max_attempts as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryStats {
    pub packets: usize,
    /// Distinct packets received by the server at least once.
    pub delivered: usize,
    pub parked: usize,
    pub transmissions: u64,
    pub drained: bool,
    /// Server-side order of first receptions.
    pub first_receptions: Vec<u16>,
    pub end_ts: i64,
}

impl DeliveryStats {
    pub fn delivered_fraction(&self) -> f64 {
        self.delivered as f64 / self.packets as f64
    }

    pub fn mean_transmissions(&self) -> f64 {
        self.transmissions as f64 / self.packets as f64
    }
}

/// Push `packets` payloads, one every `interval_ms`, through a queue and
/// link until the queue is empty or `horizon_ms` passes.
pub fn simulate_delivery<R: Rng + ?Sized>(
    packets: usize,
    interval_ms: i64,
    cfg: QueueConfig,
    link: &LinkModel,
    horizon_ms: i64,
    rng: &mut R,
) -> Result<DeliveryStats, QueueError> {
    let mut q = UplinkQueue::open(MemStorage::new(), cfg)?;
    let mut received = vec![false; packets];
    let mut order = Vec::new();
    let mut seq_to_idx = std::collections::HashMap::new();
    let mut pending_ack: Option<(i64, u16)> = None;
    let mut next_enqueue = 0usize;
    let mut now = 0i64;
    while now <= horizon_ms {
        while next_enqueue < packets && next_enqueue as i64 * interval_ms <= now {
            let seq = q.enqueue(&(next_enqueue as u32).to_be_bytes(), now)?;
            seq_to_idx.insert(seq, next_enqueue);
            next_enqueue += 1;
        }
        if let Some((t, seq)) = pending_ack {
            if t <= now {
                q.confirm(seq)?;
                pending_ack = None;
            }
        }
        if let Some(tx) = q.poll_transmit(now)? {
            let out = link.transmit(rng);
            if out.delivered {
                let idx = seq_to_idx[&tx.seq];
                if !received[idx] {
                    received[idx] = true;
                    order.push(tx.seq);
                }
            }
            if out.acked {
                pending_ack = Some((now + link.latency_ms, tx.seq));
            }
        }
        if !q.parked().is_empty() {
            // nobody reviews parked entries here; free their sequence numbers
            q.clear_parked()?;
        }
        if next_enqueue == packets && q.is_empty() {
            break;
        }
        let mut wake = [
            q.next_wakeup(),
            pending_ack.map(|(t, _)| t),
            (next_enqueue < packets).then(|| next_enqueue as i64 * interval_ms),
        ]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(horizon_ms + 1);
        if wake <= now {
            wake = now + 1;
        }
        now = wake;
    }
    Ok(DeliveryStats {
        packets,
        delivered: received.iter().filter(|&&r| r).count(),
        parked: q.metrics().parked as usize,
        transmissions: q.metrics().transmissions,
        drained: q.is_empty() && next_enqueue == packets,
        first_receptions: order,
        end_ts: now,
    })
}
