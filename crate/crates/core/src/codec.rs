//! Bit-packed uplink and downlink payloads.
//!
//! Every payload starts with one byte: message type in the high nibble,
//! codec version (1) in the low nibble. Fields follow MSB-first with no
//! alignment; the final byte is zero-padded. The normative layout table is
//! in `docs/wire-format.md`.

use std::fmt;

use thiserror::Error;

use crate::rfid::{TagId, COUNTRY_BITS, NATIONAL_ID_BITS};
use crate::weighing::{AnimalVisit, VisitFlags};

pub const CODEC_VERSION: u8 = 1;
/// Largest payload the radio accepts at the slowest data rate.
pub const MAX_PAYLOAD: usize = 51;
pub const MAX_TRAP_OPS: usize = 8;

const TEMP_OFFSET_DC: i32 = 400;
const TEMP_MAX_CODE: i32 = (1 << 12) - 1;
const RH_MAX_DPCT: u16 = 1000;
const WEIGHT_MAX_DG: u32 = u16::MAX as u32;
const STD_MAX_DG: u16 = (1 << 10) - 1;
const TAG_BITS: u32 = COUNTRY_BITS + NATIONAL_ID_BITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("field `{field}` out of range: {value}")]
    Range { field: &'static str, value: i64 },
    #[error("trap update carries {0} ops, at most {MAX_TRAP_OPS} fit one downlink; split it")]
    TooManyOps(usize),
    #[error("encoded size {0} bytes exceeds the {MAX_PAYLOAD}-byte budget")]
    TooLarge(usize),
    #[error("empty payload")]
    Empty,
    #[error("truncated payload: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown message type {0:#x}")]
    UnknownType(u8),
    #[error("unsupported codec version {0}")]
    Version(u8),
    #[error("payload has {got} bytes, message needs exactly {expected}")]
    TrailingBytes { expected: usize, got: usize },
    #[error("non-zero padding bits")]
    Padding,
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    SystemUpdate = 0x1,
    AnimalUpdate = 0x2,
    DbSyncRequest = 0x3,
    TrapEvent = 0x4,
    TrapUpdate = 0x9,
}

impl MessageType {
    pub fn from_nibble(n: u8) -> Option<Self> {
        Some(match n {
            0x1 => Self::SystemUpdate,
            0x2 => Self::AnimalUpdate,
            0x3 => Self::DbSyncRequest,
            0x4 => Self::TrapEvent,
            0x9 => Self::TrapUpdate,
            _ => return None,
        })
    }
}

/// Station error code bitmask carried in status uplinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, serde::Serialize, serde::Deserialize)]
pub struct ErrorFlags(pub u16);

impl ErrorFlags {
    pub const SCALE_FAULT: ErrorFlags = ErrorFlags(1 << 0);
    pub const RFID_FAULT: ErrorFlags = ErrorFlags(1 << 1);
    pub const DOOR_FAULT: ErrorFlags = ErrorFlags(1 << 2);
    pub const HUMIDITY_INGRESS: ErrorFlags = ErrorFlags(1 << 3);
    pub const UPLINK_PARKED: ErrorFlags = ErrorFlags(1 << 4);
    pub const STORAGE_FAULT: ErrorFlags = ErrorFlags(1 << 5);

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn contains(self, other: ErrorFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: ErrorFlags) {
        self.0 |= other.0;
    }

    pub fn remove(&mut self, other: ErrorFlags) {
        self.0 &= !other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn names(self) -> Vec<&'static str> {
        [
            (Self::SCALE_FAULT, "scale"),
            (Self::RFID_FAULT, "rfid"),
            (Self::DOOR_FAULT, "door"),
            (Self::HUMIDITY_INGRESS, "humidity"),
            (Self::UPLINK_PARKED, "uplink"),
            (Self::STORAGE_FAULT, "storage"),
        ]
        .into_iter()
        .filter(|(f, _)| self.contains(*f))
        .map(|(_, n)| n)
        .collect()
    }
}

impl std::ops::BitOr for ErrorFlags {
    type Output = ErrorFlags;
    fn bitor(self, rhs: Self) -> Self {
        ErrorFlags(self.0 | rhs.0)
    }
}

/// Periodic station status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemUpdate {
    pub seq: u16,
    pub ts: u32,
    /// Tenths of a degree Celsius, -40.0 ..= 369.5 °C.
    pub temp_in_dc: i16,
    pub temp_out_dc: i16,
    /// Tenths of a percent, 0 ..= 100.0 %.
    pub rh_in_dpct: u16,
    pub rh_out_dpct: u16,
    pub error_flags: ErrorFlags,
}

/// Everything measured about one animal visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnimalUpdate {
    pub seq: u16,
    pub tag: Option<TagId>,
    pub entry_ts: u32,
    pub exit_ts: u32,
    /// Tenths of a gram; must fit 16 bits.
    pub weight_dg: u32,
    /// Tenths of a gram; must fit 10 bits.
    pub std_dg: u16,
    pub flags: VisitFlags,
}

impl AnimalUpdate {
    /// Quantize a visit. `epoch_s` maps the station's millisecond clock to
    /// Unix seconds. The standard deviation saturates at 102.3 g.
    pub fn from_visit(seq: u16, visit: &AnimalVisit, epoch_s: u32) -> Result<Self, CodecError> {
        let to_s = |ms: i64| -> Result<u32, CodecError> {
            let s = epoch_s as i64 + ms.div_euclid(1000);
            u32::try_from(s).map_err(|_| CodecError::Range { field: "timestamp", value: s })
        };
        let weight = (visit.weight_grams * 10.0).round();
        if !(0.0..=WEIGHT_MAX_DG as f64).contains(&weight) {
            return Err(CodecError::Range { field: "weight", value: weight as i64 });
        }
        let std = (visit.quality_std_grams * 10.0).round();
        let std_dg = if std.is_finite() { std.clamp(0.0, STD_MAX_DG as f64) as u16 } else { STD_MAX_DG };
        Ok(Self {
            seq,
            tag: visit.tag,
            entry_ts: to_s(visit.entry_ts)?,
            exit_ts: to_s(visit.exit_ts)?,
            weight_dg: weight as u32,
            std_dg,
            flags: visit.flags,
        })
    }

    pub fn weight_grams(&self) -> f64 {
        self.weight_dg as f64 / 10.0
    }

    pub fn std_grams(&self) -> f64 {
        self.std_dg as f64 / 10.0
    }
}

/// Request for trap database changes newer than `last_updated`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbSyncRequest {
    pub seq: u16,
    pub last_updated: u32,
}

/// The trap closed on an animal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrapEvent {
    pub seq: u16,
    pub ts: u32,
    pub tag: Option<TagId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Uplink {
    System(SystemUpdate),
    Animal(AnimalUpdate),
    DbSync(DbSyncRequest),
    Trap(TrapEvent),
}

impl Uplink {
    pub fn seq(&self) -> u16 {
        match self {
            Uplink::System(m) => m.seq,
            Uplink::Animal(m) => m.seq,
            Uplink::DbSync(m) => m.seq,
            Uplink::Trap(m) => m.seq,
        }
    }

    pub fn message_type(&self) -> MessageType {
        match self {
            Uplink::System(_) => MessageType::SystemUpdate,
            Uplink::Animal(_) => MessageType::AnimalUpdate,
            Uplink::DbSync(_) => MessageType::DbSyncRequest,
            Uplink::Trap(_) => MessageType::TrapEvent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagOpKind {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagOp {
    pub kind: TagOpKind,
    pub tag: TagId,
}

/// Trap database delta sent in answer to a [`DbSyncRequest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrapUpdate {
    pub server_time: u32,
    /// New master-entry state; `None` leaves it unchanged.
    pub master: Option<bool>,
    /// More parts of the same delta follow.
    pub more_follows: bool,
    /// Index of this part within the delta.
    pub part: u8,
    pub ops: Vec<TagOp>,
}

impl TrapUpdate {
    /// Common country code of all ops, if there is one.
    fn shared_country(&self) -> Option<u16> {
        let first = self.ops.first()?.tag.country_code();
        self.ops.iter().all(|op| op.tag.country_code() == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Downlink {
    TrapUpdate(TrapUpdate),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Uplink(Uplink),
    Downlink(Downlink),
}

impl From<Uplink> for Message {
    fn from(u: Uplink) -> Self {
        Message::Uplink(u)
    }
}

impl From<Downlink> for Message {
    fn from(d: Downlink) -> Self {
        Message::Downlink(d)
    }
}

impl From<TrapUpdate> for Message {
    fn from(t: TrapUpdate) -> Self {
        Message::Downlink(Downlink::TrapUpdate(t))
    }
}

struct BitWriter {
    buf: Vec<u8>,
    nbits: usize,
}

impl BitWriter {
    fn with_header(ty: MessageType, bits: usize) -> Self {
        let mut w = Self { buf: Vec::with_capacity(bits.div_ceil(8)), nbits: 0 };
        w.put(ty as u64, 4);
        w.put(CODEC_VERSION as u64, 4);
        w
    }

    fn put(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value >> width == 0, "value {value} wider than {width} bits");
        for i in (0..width).rev() {
            if self.nbits.is_multiple_of(8) {
                self.buf.push(0);
            }
            if (value >> i) & 1 == 1 {
                let last = self.buf.len() - 1;
                self.buf[last] |= 0x80 >> (self.nbits % 8);
            }
            self.nbits += 1;
        }
    }

    fn put_bool(&mut self, b: bool) {
        self.put(b as u64, 1);
    }

    fn put_tag(&mut self, tag: Option<TagId>) {
        self.put_bool(tag.is_some());
        self.put(tag.map_or(0, |t| t.to_bits()), TAG_BITS);
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn get(&mut self, width: u32) -> u64 {
        let mut v = 0u64;
        for _ in 0..width {
            let bit = (self.data[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        v
    }

    fn get_bool(&mut self) -> bool {
        self.get(1) == 1
    }

    fn get_tag(&mut self) -> Result<Option<TagId>, CodecError> {
        let present = self.get_bool();
        let bits = self.get(TAG_BITS);
        match (present, bits) {
            (true, b) => Ok(Some(TagId::from_bits(b))),
            (false, 0) => Ok(None),
            (false, _) => Err(CodecError::NonCanonical("tag bits set without tag flag")),
        }
    }

    fn finish(self) -> Result<(), CodecError> {
        let total = self.data.len() * 8;
        let mut rest = BitReader { data: self.data, pos: self.pos };
        if rest.get((total - self.pos) as u32) != 0 {
            return Err(CodecError::Padding);
        }
        Ok(())
    }
}

const SYSTEM_BITS: usize = 8 + 16 + 32 + 12 + 12 + 10 + 10 + 16;
const ANIMAL_BITS: usize = 8 + 16 + 1 + 48 + 32 + 32 + 16 + 10 + 3;
const DBSYNC_BITS: usize = 8 + 16 + 32;
const TRAP_EVENT_BITS: usize = 8 + 16 + 32 + 1 + 48;
const TRAP_UPDATE_HEADER_BITS: usize = 8 + 32 + 1 + 1 + 1 + 1 + 4 + 8;

fn bytes(bits: usize) -> usize {
    bits.div_ceil(8)
}

fn trap_update_bits(op_count: usize, shared_country: bool) -> usize {
    let per_op = if shared_country { 1 + NATIONAL_ID_BITS as usize } else { 1 + TAG_BITS as usize };
    TRAP_UPDATE_HEADER_BITS + if shared_country { COUNTRY_BITS as usize } else { 0 } + op_count * per_op
}

/// Encoded length in bytes, computed from the layout without encoding.
pub fn payload_size(msg: &Message) -> usize {
    match msg {
        Message::Uplink(Uplink::System(_)) => bytes(SYSTEM_BITS),
        Message::Uplink(Uplink::Animal(_)) => bytes(ANIMAL_BITS),
        Message::Uplink(Uplink::DbSync(_)) => bytes(DBSYNC_BITS),
        Message::Uplink(Uplink::Trap(_)) => bytes(TRAP_EVENT_BITS),
        Message::Downlink(Downlink::TrapUpdate(t)) => {
            bytes(trap_update_bits(t.ops.len(), t.shared_country().is_some()))
        }
    }
}

fn temp_code(field: &'static str, dc: i16) -> Result<u64, CodecError> {
    let code = dc as i32 + TEMP_OFFSET_DC;
    if !(0..=TEMP_MAX_CODE).contains(&code) {
        return Err(CodecError::Range { field, value: dc as i64 });
    }
    Ok(code as u64)
}

fn rh_code(field: &'static str, dpct: u16) -> Result<u64, CodecError> {
    if dpct > RH_MAX_DPCT {
        return Err(CodecError::Range { field, value: dpct as i64 });
    }
    Ok(dpct as u64)
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let out = match msg {
        Message::Uplink(Uplink::System(m)) => {
            let mut w = BitWriter::with_header(MessageType::SystemUpdate, SYSTEM_BITS);
            w.put(m.seq as u64, 16);
            w.put(m.ts as u64, 32);
            w.put(temp_code("temp_in", m.temp_in_dc)?, 12);
            w.put(temp_code("temp_out", m.temp_out_dc)?, 12);
            w.put(rh_code("rh_in", m.rh_in_dpct)?, 10);
            w.put(rh_code("rh_out", m.rh_out_dpct)?, 10);
            w.put(m.error_flags.0 as u64, 16);
            w.buf
        }
        Message::Uplink(Uplink::Animal(m)) => {
            if m.weight_dg > WEIGHT_MAX_DG {
                return Err(CodecError::Range { field: "weight", value: m.weight_dg as i64 });
            }
            if m.std_dg > STD_MAX_DG {
                return Err(CodecError::Range { field: "std", value: m.std_dg as i64 });
            }
            let mut w = BitWriter::with_header(MessageType::AnimalUpdate, ANIMAL_BITS);
            w.put(m.seq as u64, 16);
            w.put_tag(m.tag);
            w.put(m.entry_ts as u64, 32);
            w.put(m.exit_ts as u64, 32);
            w.put(m.weight_dg as u64, 16);
            w.put(m.std_dg as u64, 10);
            w.put(m.flags.bits() as u64, 3);
            w.buf
        }
        Message::Uplink(Uplink::DbSync(m)) => {
            let mut w = BitWriter::with_header(MessageType::DbSyncRequest, DBSYNC_BITS);
            w.put(m.seq as u64, 16);
            w.put(m.last_updated as u64, 32);
            w.buf
        }
        Message::Uplink(Uplink::Trap(m)) => {
            let mut w = BitWriter::with_header(MessageType::TrapEvent, TRAP_EVENT_BITS);
            w.put(m.seq as u64, 16);
            w.put(m.ts as u64, 32);
            w.put_tag(m.tag);
            w.buf
        }
        Message::Downlink(Downlink::TrapUpdate(m)) => {
            if m.ops.len() > MAX_TRAP_OPS {
                return Err(CodecError::TooManyOps(m.ops.len()));
            }
            let shared = m.shared_country();
            let mut w = BitWriter::with_header(
                MessageType::TrapUpdate,
                trap_update_bits(m.ops.len(), shared.is_some()),
            );
            w.put(m.server_time as u64, 32);
            w.put_bool(m.master.unwrap_or(false));
            w.put_bool(m.master.is_some());
            w.put_bool(m.more_follows);
            w.put_bool(shared.is_some());
            w.put(m.ops.len() as u64, 4);
            w.put(m.part as u64, 8);
            if let Some(c) = shared {
                w.put(c as u64, COUNTRY_BITS);
            }
            for op in &m.ops {
                w.put_bool(op.kind == TagOpKind::Remove);
                if shared.is_some() {
                    w.put(op.tag.national_id(), NATIONAL_ID_BITS);
                } else {
                    w.put(op.tag.to_bits(), TAG_BITS);
                }
            }
            w.buf
        }
    };
    if out.len() > MAX_PAYLOAD {
        return Err(CodecError::TooLarge(out.len()));
    }
    debug_assert_eq!(out.len(), payload_size(msg));
    Ok(out)
}

fn expect_len(data: &[u8], expected: usize) -> Result<(), CodecError> {
    match data.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(CodecError::Truncated { needed: expected, got: data.len() }),
        std::cmp::Ordering::Greater => Err(CodecError::TrailingBytes { expected, got: data.len() }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn decode(data: &[u8]) -> Result<Message, CodecError> {
    let first = *data.first().ok_or(CodecError::Empty)?;
    let ty = MessageType::from_nibble(first >> 4).ok_or(CodecError::UnknownType(first >> 4))?;
    let version = first & 0x0f;
    if version != CODEC_VERSION {
        return Err(CodecError::Version(version));
    }
    let mut r = BitReader { data, pos: 8 };
    let msg = match ty {
        MessageType::SystemUpdate => {
            expect_len(data, bytes(SYSTEM_BITS))?;
            let seq = r.get(16) as u16;
            let ts = r.get(32) as u32;
            let temp = |code: u64| (code as i32 - TEMP_OFFSET_DC) as i16;
            let temp_in_dc = temp(r.get(12));
            let temp_out_dc = temp(r.get(12));
            let rh_in_dpct = r.get(10) as u16;
            let rh_out_dpct = r.get(10) as u16;
            rh_code("rh_in", rh_in_dpct)?;
            rh_code("rh_out", rh_out_dpct)?;
            let error_flags = ErrorFlags(r.get(16) as u16);
            Message::Uplink(Uplink::System(SystemUpdate {
                seq,
                ts,
                temp_in_dc,
                temp_out_dc,
                rh_in_dpct,
                rh_out_dpct,
                error_flags,
            }))
        }
        MessageType::AnimalUpdate => {
            expect_len(data, bytes(ANIMAL_BITS))?;
            let seq = r.get(16) as u16;
            let tag = r.get_tag()?;
            let entry_ts = r.get(32) as u32;
            let exit_ts = r.get(32) as u32;
            let weight_dg = r.get(16) as u32;
            let std_dg = r.get(10) as u16;
            let flags = VisitFlags::from_bits(r.get(3) as u8);
            Message::Uplink(Uplink::Animal(AnimalUpdate { seq, tag, entry_ts, exit_ts, weight_dg, std_dg, flags }))
        }
        MessageType::DbSyncRequest => {
            expect_len(data, bytes(DBSYNC_BITS))?;
            let seq = r.get(16) as u16;
            let last_updated = r.get(32) as u32;
            Message::Uplink(Uplink::DbSync(DbSyncRequest { seq, last_updated }))
        }
        MessageType::TrapEvent => {
            expect_len(data, bytes(TRAP_EVENT_BITS))?;
            let seq = r.get(16) as u16;
            let ts = r.get(32) as u32;
            let tag = r.get_tag()?;
            Message::Uplink(Uplink::Trap(TrapEvent { seq, ts, tag }))
        }
        MessageType::TrapUpdate => {
            let header = bytes(TRAP_UPDATE_HEADER_BITS);
            if data.len() < header {
                return Err(CodecError::Truncated { needed: header, got: data.len() });
            }
            let server_time = r.get(32) as u32;
            let master_value = r.get_bool();
            let master_valid = r.get_bool();
            let more_follows = r.get_bool();
            let shared = r.get_bool();
            let count = r.get(4) as usize;
            let part = r.get(8) as u8;
            if count > MAX_TRAP_OPS {
                return Err(CodecError::TooManyOps(count));
            }
            if master_value && !master_valid {
                return Err(CodecError::NonCanonical("master value without valid bit"));
            }
            if shared && count == 0 {
                return Err(CodecError::NonCanonical("shared country without ops"));
            }
            expect_len(data, bytes(trap_update_bits(count, shared)))?;
            let country = if shared { Some(r.get(COUNTRY_BITS) as u16) } else { None };
            let mut ops = Vec::with_capacity(count);
            for _ in 0..count {
                let kind = if r.get_bool() { TagOpKind::Remove } else { TagOpKind::Add };
                let tag = match country {
                    Some(c) => TagId::from_bits(((c as u64) << NATIONAL_ID_BITS) | r.get(NATIONAL_ID_BITS)),
                    None => TagId::from_bits(r.get(TAG_BITS)),
                };
                ops.push(TagOp { kind, tag });
            }
            let update = TrapUpdate {
                server_time,
                master: master_valid.then_some(master_value),
                more_follows,
                part,
                ops,
            };
            if !shared && update.shared_country().is_some() {
                return Err(CodecError::NonCanonical("ops share a country but are not packed"));
            }
            Message::Downlink(Downlink::TrapUpdate(update))
        }
    };
    r.finish()?;
    Ok(msg)
}

pub fn encode_uplink(u: &Uplink) -> Result<Vec<u8>, CodecError> {
    encode(&Message::Uplink(u.clone()))
}

pub fn encode_trap_update(t: &TrapUpdate) -> Result<Vec<u8>, CodecError> {
    encode(&Message::Downlink(Downlink::TrapUpdate(t.clone())))
}

/// Lowercase hex dump used in logs and test vectors.
pub fn to_hex(payload: &[u8]) -> String {
    hex::encode(payload)
}

pub fn from_hex(s: &str) -> Result<Vec<u8>, hex::FromHexError> {
    hex::decode(s.trim())
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Uplink(Uplink::System(m)) => write!(
                f,
                "SystemUpdate seq={} ts={} t_in={:.1} t_out={:.1} rh_in={:.1} rh_out={:.1} flags={:#06x}",
                m.seq,
                m.ts,
                m.temp_in_dc as f64 / 10.0,
                m.temp_out_dc as f64 / 10.0,
                m.rh_in_dpct as f64 / 10.0,
                m.rh_out_dpct as f64 / 10.0,
                m.error_flags.0
            ),
            Message::Uplink(Uplink::Animal(m)) => write!(
                f,
                "AnimalUpdate seq={} tag={} entry={} exit={} weight={:.1} std={:.1} flags={}",
                m.seq,
                m.tag.map_or_else(|| "-".to_string(), |t| t.to_string()),
                m.entry_ts,
                m.exit_ts,
                m.weight_grams(),
                m.std_grams(),
                m.flags.bits()
            ),
            Message::Uplink(Uplink::DbSync(m)) => {
                write!(f, "DbSyncRequest seq={} last_updated={}", m.seq, m.last_updated)
            }
            Message::Uplink(Uplink::Trap(m)) => write!(
                f,
                "TrapEvent seq={} ts={} tag={}",
                m.seq,
                m.ts,
                m.tag.map_or_else(|| "-".to_string(), |t| t.to_string())
            ),
            Message::Downlink(Downlink::TrapUpdate(m)) => {
                write!(
                    f,
                    "TrapUpdate time={} master={:?} part={} more={} ops=[",
                    m.server_time, m.master, m.part, m.more_follows
                )?;
                for (i, op) in m.ops.iter().enumerate() {
                    let sign = if op.kind == TagOpKind::Add { '+' } else { '-' };
                    write!(f, "{}{}{}", if i > 0 { " " } else { "" }, sign, op.tag)?;
                }
                f.write_str("]")
            }
        }
    }
}
