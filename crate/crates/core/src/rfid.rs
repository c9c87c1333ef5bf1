//! FDX-B (ISO 11784/11785) transponder frames, read simulation and
//! matching of tag reads to weighing visits.
//!
//! # Frame layout
//!
//! A frame is 128 bits in transmission order:
//!
//! | bits      | content                                               |
//! |-----------|-------------------------------------------------------|
//! | 0..11     | header `00000000001` (ten zeros, then a one)          |
//! | 11..83    | 64-bit identification code, 8 blocks of 8 bits + `1`  |
//! | 83..101   | CRC-16, 2 blocks of 8 bits + `1`                      |
//! | 101..128  | 24-bit extension, 3 blocks of 8 bits + `1`            |
//!
//! Every field is sent least significant bit first. Within the 64-bit
//! identification code: bits 0..38 national id, 38..48 country code,
//! bit 48 data-block flag, 49..63 reserved, bit 63 animal flag.
//!
//! The CRC uses polynomial 0x1021 with initial value 0x0000, clocked LSB
//! first over the 64 identification bits (the reflected form, also known
//! as CRC-16/KERMIT).
//!
//! The hex form packs transmission bit 0 into the most significant bit of
//! the first byte, giving 32 hex characters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::weighing::AnimalVisit;

pub const COUNTRY_BITS: u32 = 10;
pub const NATIONAL_ID_BITS: u32 = 38;
pub const MAX_COUNTRY: u16 = (1 << COUNTRY_BITS) - 1;
pub const MAX_NATIONAL_ID: u64 = (1 << NATIONAL_ID_BITS) - 1;

const HEADER_BITS: usize = 11;
const BLOCK_BITS: usize = 9;
const ID_BLOCKS: usize = 8;
const CRC_BLOCKS: usize = 2;
const EXT_BLOCKS: usize = 3;
const CRC_POLY_REFLECTED: u16 = 0x8408;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RfidError {
    #[error("country code {0} exceeds 10 bits")]
    CountryRange(u32),
    #[error("national id {0} exceeds 38 bits")]
    NationalIdRange(u64),
    #[error("malformed tag id {0:?}, expected CCC_NNNNNNNNNNNN")]
    TagSyntax(String),
    #[error("malformed frame hex: {0}")]
    Hex(String),
}

/// Frame-level decode failures. None of these are fatal to a scanner.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame header mismatch")]
    Header,
    #[error("missing stuffing bit after block {block}")]
    Framing { block: usize },
    #[error("crc mismatch: frame carries {received:#06x}, computed {computed:#06x}")]
    Crc { received: u16, computed: u16 },
}

/// Animal identity carried by an FDX-B transponder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagId {
    country: u16,
    national: u64,
}

impl TagId {
    pub fn new(country: u16, national: u64) -> Result<Self, RfidError> {
        if country > MAX_COUNTRY {
            return Err(RfidError::CountryRange(country as u32));
        }
        if national > MAX_NATIONAL_ID {
            return Err(RfidError::NationalIdRange(national));
        }
        Ok(Self { country, national })
    }

    pub fn country_code(&self) -> u16 {
        self.country
    }

    pub fn national_id(&self) -> u64 {
        self.national
    }

    /// 48-bit packed form, country in the upper 10 bits.
    pub fn to_bits(&self) -> u64 {
        ((self.country as u64) << NATIONAL_ID_BITS) | self.national
    }

    pub fn from_bits(bits: u64) -> Self {
        Self {
            country: ((bits >> NATIONAL_ID_BITS) & MAX_COUNTRY as u64) as u16,
            national: bits & MAX_NATIONAL_ID,
        }
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}_{:012}", self.country, self.national)
    }
}

impl FromStr for TagId {
    type Err = RfidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RfidError::TagSyntax(s.to_string());
        let (c, n) = s.trim().split_once('_').ok_or_else(bad)?;
        if c.is_empty() || n.is_empty() || !c.bytes().chain(n.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let country: u32 = c.parse().map_err(|_| bad())?;
        let national: u64 = n.parse().map_err(|_| bad())?;
        if country > MAX_COUNTRY as u32 {
            return Err(RfidError::CountryRange(country));
        }
        TagId::new(country as u16, national)
    }
}

impl serde::Serialize for TagId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for TagId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameFlags {
    pub animal: bool,
    pub data_block: bool,
}

impl FrameFlags {
    pub const ANIMAL: FrameFlags = FrameFlags { animal: true, data_block: false };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedFrame {
    pub tag: TagId,
    pub flags: FrameFlags,
    pub reserved: u16,
    /// Trailing data block; carried but not interpreted.
    pub extension: u32,
}

/// One 128-bit FDX-B frame. Transmission bit `i` is bit `127 - i` of the
/// inner value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FdxbFrame(u128);

impl FdxbFrame {
    pub fn from_u128(raw: u128) -> Self {
        Self(raw)
    }

    pub fn as_u128(&self) -> u128 {
        self.0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < 128);
        (self.0 >> (127 - i)) & 1 == 1
    }

    pub fn with_bit_flipped(&self, i: usize) -> Self {
        assert!(i < 128);
        Self(self.0 ^ (1u128 << (127 - i)))
    }

    pub fn to_hex(&self) -> String {
        format!("{:032x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, RfidError> {
        let s = s.trim();
        if s.len() != 32 {
            return Err(RfidError::Hex(format!("expected 32 hex chars, got {}", s.len())));
        }
        u128::from_str_radix(s, 16)
            .map(Self)
            .map_err(|e| RfidError::Hex(e.to_string()))
    }
}

impl fmt::Display for FdxbFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// CRC-16 (poly 0x1021, init 0, LSB-first) over a 64-bit word sent LSB first.
pub fn crc16_lsb_first(mut word: u64, nbits: u32) -> u16 {
    let mut crc: u16 = 0;
    for _ in 0..nbits {
        let bit = (word & 1) as u16;
        word >>= 1;
        let mix = (crc ^ bit) & 1;
        crc >>= 1;
        if mix == 1 {
            crc ^= CRC_POLY_REFLECTED;
        }
    }
    crc
}

fn id_word(tag: TagId, flags: FrameFlags, reserved: u16) -> u64 {
    tag.national
        | (tag.country as u64) << 38
        | (flags.data_block as u64) << 48
        | ((reserved as u64) & 0x3fff) << 49
        | (flags.animal as u64) << 63
}

struct BitWriter {
    value: u128,
    pos: usize,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        if bit {
            self.value |= 1u128 << (127 - self.pos);
        }
        self.pos += 1;
    }

    fn push_blocks(&mut self, mut field: u64, blocks: usize) {
        for _ in 0..blocks {
            for _ in 0..8 {
                self.push(field & 1 == 1);
                field >>= 1;
            }
            self.push(true);
        }
    }
}

pub fn encode_frame(tag: TagId, flags: FrameFlags) -> FdxbFrame {
    encode_frame_with(tag, flags, 0, 0)
}

pub fn encode_frame_with(tag: TagId, flags: FrameFlags, reserved: u16, extension: u32) -> FdxbFrame {
    let id = id_word(tag, flags, reserved);
    let crc = crc16_lsb_first(id, 64);
    let mut w = BitWriter { value: 0, pos: 0 };
    for _ in 0..10 {
        w.push(false);
    }
    w.push(true);
    w.push_blocks(id, ID_BLOCKS);
    w.push_blocks(crc as u64, CRC_BLOCKS);
    w.push_blocks((extension & 0xff_ffff) as u64, EXT_BLOCKS);
    debug_assert_eq!(w.pos, 128);
    FdxbFrame(w.value)
}

pub fn decode_frame(frame: &FdxbFrame) -> Result<DecodedFrame, FrameError> {
    for i in 0..HEADER_BITS - 1 {
        if frame.bit(i) {
            return Err(FrameError::Header);
        }
    }
    if !frame.bit(HEADER_BITS - 1) {
        return Err(FrameError::Header);
    }

    let mut fields = [0u64; 3];
    let groups = [ID_BLOCKS, CRC_BLOCKS, EXT_BLOCKS];
    let mut block = 0;
    for (field, &nblocks) in fields.iter_mut().zip(groups.iter()) {
        for b in 0..nblocks {
            let start = HEADER_BITS + block * BLOCK_BITS;
            for j in 0..8 {
                if frame.bit(start + j) {
                    *field |= 1u64 << (b * 8 + j);
                }
            }
            if !frame.bit(start + 8) {
                return Err(FrameError::Framing { block });
            }
            block += 1;
        }
    }

    let [id, crc, ext] = fields;
    let computed = crc16_lsb_first(id, 64);
    if computed != crc as u16 {
        return Err(FrameError::Crc { received: crc as u16, computed });
    }

    Ok(DecodedFrame {
        tag: TagId {
            national: id & MAX_NATIONAL_ID,
            country: ((id >> 38) & MAX_COUNTRY as u64) as u16,
        },
        flags: FrameFlags {
            data_block: (id >> 48) & 1 == 1,
            animal: (id >> 63) & 1 == 1,
        },
        reserved: ((id >> 49) & 0x3fff) as u16,
        extension: ext as u32,
    })
}

/// A decoded tag read, stamped in the station clock domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfidDetection {
    pub tag: TagId,
    pub ts: i64,
    pub station_id: u16,
}

impl RfidDetection {
    /// `ts_ms,country,id` export line.
    pub fn to_line(&self) -> String {
        format!("{},{},{}", self.ts, self.tag.country, self.tag.national)
    }

    pub fn parse_line(line: &str, station_id: u16) -> Result<Self, RfidError> {
        let bad = || RfidError::TagSyntax(line.to_string());
        let mut it = line.trim().split(',');
        let ts: i64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let country: u32 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let national: u64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if it.next().is_some() {
            return Err(bad());
        }
        if country > MAX_COUNTRY as u32 {
            return Err(RfidError::CountryRange(country));
        }
        Ok(Self { tag: TagId::new(country as u16, national)?, ts, station_id })
    }
}

/// One pass of a tag through the antenna field, read with probability `p_detect`.
pub fn simulate_pass<R: Rng + ?Sized>(
    tag: TagId,
    ts: i64,
    station_id: u16,
    p_detect: f64,
    rng: &mut R,
) -> Option<RfidDetection> {
    assert!((0.0..=1.0).contains(&p_detect), "p_detect {p_detect} outside [0, 1]");
    rng.random_bool(p_detect).then_some(RfidDetection { tag, ts, station_id })
}

/// Reads of one visit: one pass on entering, one on leaving.
pub fn simulate_visit<R: Rng + ?Sized>(
    tag: TagId,
    entry_ts: i64,
    exit_ts: i64,
    station_id: u16,
    p_detect: f64,
    rng: &mut R,
) -> Vec<RfidDetection> {
    [entry_ts, exit_ts]
        .into_iter()
        .filter_map(|ts| simulate_pass(tag, ts, station_id, p_detect, rng))
        .collect()
}

/// Probability that at least one of two independent passes is read.
pub fn visit_detection_probability(p_detect: f64) -> f64 {
    1.0 - (1.0 - p_detect).powi(2)
}

/// Distinct tags whose nearest reads lie within this margin of each other
/// are reported as ambiguous.
pub const AMBIGUITY_MARGIN_MS: i64 = 1_000;

const UNASSIGNED_COST: i64 = 1_000_000_000_000;
const FORBIDDEN_COST: i64 = 1_000_000_000_000_000;

/// Cost of attaching `tag` to `visit`: twice the distance in ms to the
/// nearest entry/exit anchor, plus one when that anchor is the exit so
/// that entrance reads win ties.
pub fn match_cost(visit: &AnimalVisit, tag: TagId, detections: &[RfidDetection], window_ms: i64) -> Option<i64> {
    detections
        .iter()
        .filter(|d| d.tag == tag)
        .filter_map(|d| {
            let de = (d.ts - visit.entry_ts).abs();
            let dx = (d.ts - visit.exit_ts).abs();
            let (dist, at_exit) = if de <= dx { (de, 0) } else { (dx, 1) };
            (dist <= window_ms).then_some(dist * 2 + at_exit)
        })
        .min()
}

/// Attach tags to a batch of visits completed together.
///
/// Visits are paired with distinct tags so that the number of tagged visits
/// is maximal and the summed [`match_cost`] minimal. All reads of an
/// assigned tag within the window of its visit are consumed; the returned
/// indices point into `detections`. Visits that already carry a tag are
/// left untouched.
pub fn match_detections(
    visits: &mut [AnimalVisit],
    detections: &[RfidDetection],
    window_ms: i64,
) -> Vec<usize> {
    let open: Vec<usize> = (0..visits.len()).filter(|&i| visits[i].tag.is_none()).collect();
    let mut tags: Vec<TagId> = detections.iter().map(|d| d.tag).collect();
    tags.sort();
    tags.dedup();
    if open.is_empty() || tags.is_empty() {
        return Vec::new();
    }

    let costs: Vec<Vec<Option<i64>>> = open
        .iter()
        .map(|&v| tags.iter().map(|&t| match_cost(&visits[v], t, detections, window_ms)).collect())
        .collect();

    // Columns: one per tag, then one "untagged" slot per visit.
    let rows = open.len();
    let cols = tags.len() + rows;
    let matrix: Vec<Vec<i64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| match c.checked_sub(tags.len()) {
                    None => costs[r][c].unwrap_or(FORBIDDEN_COST),
                    Some(_) => UNASSIGNED_COST,
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&matrix);

    let mut consumed = Vec::new();
    for (r, &c) in assignment.iter().enumerate() {
        if c >= tags.len() || costs[r][c].is_none() {
            continue;
        }
        let tag = tags[c];
        let vi = open[r];
        let own = costs[r][c].unwrap_or(0) / 2;
        let ambiguous = costs[r]
            .iter()
            .enumerate()
            .any(|(k, other)| k != c && other.is_some_and(|o| (o / 2 - own).abs() < AMBIGUITY_MARGIN_MS));
        let visit = &mut visits[vi];
        visit.tag = Some(tag);
        visit.flags.ambiguous_tag |= ambiguous;
        for (i, d) in detections.iter().enumerate() {
            if d.tag == tag
                && ((d.ts - visit.entry_ts).abs() <= window_ms || (d.ts - visit.exit_ts).abs() <= window_ms)
            {
                consumed.push(i);
            }
        }
    }
    consumed.sort_unstable();
    consumed.dedup();
    consumed
}

/// Rectangular min-cost assignment (rows <= cols) by the shortest
/// augmenting path method with potentials. Returns the column per row.
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    assert!(n <= m);
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays, column 0 is the virtual start.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighing::VisitFlags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tag(c: u16, n: u64) -> TagId {
        TagId::new(c, n).unwrap()
    }

    fn visit(entry: i64, exit: i64) -> AnimalVisit {
        AnimalVisit {
            tag: None,
            entry_ts: entry,
            exit_ts: exit,
            weight_grams: 40.0,
            quality_std_grams: 0.2,
            station_id: 1,
            flags: VisitFlags::default(),
        }
    }

    fn det(t: TagId, ts: i64) -> RfidDetection {
        RfidDetection { tag: t, ts, station_id: 1 }
    }

    #[test]
    fn crc_check_value() {
        // CRC-16/KERMIT check value over "123456789" fed byte-wise LSB first.
        let mut crc: u16 = 0;
        for b in b"123456789" {
            for k in 0..8 {
                let bit = ((b >> k) & 1) as u16;
                let mix = (crc ^ bit) & 1;
                crc >>= 1;
                if mix == 1 {
                    crc ^= CRC_POLY_REFLECTED;
                }
            }
        }
        assert_eq!(crc, 0x2189);
        let word = u64::from_le_bytes(*b"12345678");
        assert_eq!(crc16_lsb_first(word, 64), {
            let mut c: u16 = 0;
            for b in b"12345678" {
                for k in 0..8 {
                    let mix = (c ^ ((b >> k) & 1) as u16) & 1;
                    c >>= 1;
                    if mix == 1 {
                        c ^= CRC_POLY_REFLECTED;
                    }
                }
            }
            c
        });
    }

    #[test]
    fn tag_ranges() {
        assert!(TagId::new(1023, MAX_NATIONAL_ID).is_ok());
        assert_eq!(TagId::new(1024, 0), Err(RfidError::CountryRange(1024)));
        assert_eq!(TagId::new(0, 1 << 38), Err(RfidError::NationalIdRange(1 << 38)));
    }

    #[test]
    fn tag_display_and_parse() {
        let t = tag(756, 123456789);
        assert_eq!(t.to_string(), "756_000123456789");
        assert_eq!("756_000123456789".parse::<TagId>().unwrap(), t);
        assert_eq!("7_1".parse::<TagId>().unwrap(), tag(7, 1));
        assert!("756-1".parse::<TagId>().is_err());
        assert!("abc_1".parse::<TagId>().is_err());
        assert!("1024_1".parse::<TagId>().is_err());
        assert!("1_-1".parse::<TagId>().is_err());
    }

    #[test]
    fn zero_tag_frame_layout() {
        let f = encode_frame(tag(0, 0), FrameFlags::default());
        // header, then 13 blocks whose only set bit is the trailing stuff bit
        for i in 0..10 {
            assert!(!f.bit(i));
        }
        assert!(f.bit(10));
        for b in 0..13 {
            let start = 11 + 9 * b;
            for j in 0..8 {
                assert!(!f.bit(start + j), "block {b} bit {j}");
            }
            assert!(f.bit(start + 8));
        }
        let d = decode_frame(&f).unwrap();
        assert_eq!(d.tag, tag(0, 0));
        assert_eq!(d.flags, FrameFlags::default());
    }

    #[test]
    fn all_zero_is_header_error() {
        assert_eq!(decode_frame(&FdxbFrame::from_u128(0)), Err(FrameError::Header));
        assert_eq!(decode_frame(&FdxbFrame::from_u128(u128::MAX)), Err(FrameError::Header));
    }

    #[test]
    fn missing_stuff_bit_is_framing_error() {
        let f = encode_frame(tag(756, 42), FrameFlags::ANIMAL);
        let broken = f.with_bit_flipped(11 + 9 * 3 + 8);
        assert_eq!(decode_frame(&broken), Err(FrameError::Framing { block: 3 }));
    }

    #[test]
    fn flipped_payload_bit_is_crc_error() {
        let f = encode_frame(tag(756, 123456789), FrameFlags::ANIMAL);
        for i in (11..101).filter(|i| (i - 11) % 9 != 8) {
            assert!(
                matches!(decode_frame(&f.with_bit_flipped(i)), Err(FrameError::Crc { .. })),
                "bit {i}"
            );
        }
    }

    #[test]
    fn boundary_tag_round_trips() {
        let t = tag(1023, MAX_NATIONAL_ID);
        let flags = FrameFlags { animal: true, data_block: true };
        let d = decode_frame(&encode_frame(t, flags)).unwrap();
        assert_eq!((d.tag, d.flags), (t, flags));
    }

    #[test]
    fn hex_form() {
        let f = encode_frame(tag(756, 123456789), FrameFlags::ANIMAL);
        let h = f.to_hex();
        assert_eq!(h.len(), 32);
        assert_eq!(FdxbFrame::from_hex(&h).unwrap(), f);
        assert!(FdxbFrame::from_hex("00").is_err());
        assert!(FdxbFrame::from_hex(&"g".repeat(32)).is_err());
    }

    #[test]
    fn detection_lines() {
        let d = det(tag(756, 99), 12_345);
        assert_eq!(d.to_line(), "12345,756,99");
        assert_eq!(RfidDetection::parse_line("12345,756,99", 1).unwrap(), d);
        assert!(RfidDetection::parse_line("12345,756", 1).is_err());
        assert!(RfidDetection::parse_line("1,2000,1", 1).is_err());
    }

    #[test]
    fn certain_pass_always_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..1000 {
            assert!(simulate_pass(tag(1, 1), i, 1, 1.0, &mut rng).is_some());
            assert!(simulate_pass(tag(1, 1), i, 1, 0.0, &mut rng).is_none());
        }
    }

    #[test]
    fn read_before_entry_is_assigned() {
        let a = tag(756, 1);
        let mut v = [visit(10_000, 30_000)];
        let consumed = match_detections(&mut v, &[det(a, 9_000)], 5_000);
        assert_eq!(v[0].tag, Some(a));
        assert_eq!(consumed, vec![0]);
    }

    #[test]
    fn far_read_leaves_visit_untagged() {
        let mut v = [visit(10_000, 30_000)];
        let consumed = match_detections(&mut v, &[det(tag(756, 1), 4_000), det(tag(756, 1), 36_000)], 5_000);
        assert_eq!(v[0].tag, None);
        assert!(consumed.is_empty());
    }

    #[test]
    fn overlapping_visits_take_their_own_tags() {
        let (a, b) = (tag(756, 1), tag(756, 2));
        let mut v = [visit(2_000, 10_000), visit(6_000, 14_000)];
        let dets = [det(a, 2_200), det(b, 6_100), det(a, 9_900), det(b, 13_800)];
        let consumed = match_detections(&mut v, &dets, 5_000);
        assert_eq!(v[0].tag, Some(a));
        assert_eq!(v[1].tag, Some(b));
        assert_eq!(consumed, vec![0, 1, 2, 3]);
        assert!(!v[0].flags.ambiguous_tag);
    }

    #[test]
    fn equally_near_tags_prefer_entrance_and_flag() {
        let (a, b) = (tag(756, 1), tag(756, 2));
        let mut v = [visit(10_000, 20_000)];
        // a is 500 ms from the exit, b 500 ms from the entrance
        let dets = [det(a, 20_500), det(b, 9_500)];
        match_detections(&mut v, &dets, 5_000);
        assert_eq!(v[0].tag, Some(b));
        assert!(v[0].flags.ambiguous_tag);
    }

    #[test]
    fn detection_never_shared() {
        let a = tag(756, 1);
        let mut v = [visit(10_000, 12_000), visit(11_000, 13_000)];
        let consumed = match_detections(&mut v, &[det(a, 10_500)], 5_000);
        assert_eq!(v.iter().filter(|x| x.tag.is_some()).count(), 1);
        assert_eq!(consumed, vec![0]);
    }

    #[test]
    fn assignment_solver_small() {
        let m = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let a = min_cost_assignment(&m);
        let total: i64 = a.iter().enumerate().map(|(r, &c)| m[r][c]).sum();
        assert_eq!(total, 5);
    }
}
