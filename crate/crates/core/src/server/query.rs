use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rfid::TagId;
use crate::weighing::VisitFlags;

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVisit {
    pub station_id: u16,
    pub seq: u16,
    pub tag: Option<TagId>,
    /// Unix seconds.
    pub entry_ts: u32,
    pub exit_ts: u32,
    pub weight_grams: f64,
    pub std_grams: f64,
    pub flags: VisitFlags,
    pub received_ts: u32,
}

/// Sort key of a stored visit; `id` breaks ties between rows that share
/// entry time, station and a wrapped sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VisitKey {
    pub entry_ts: u32,
    pub station_id: u16,
    pub seq: u16,
    pub id: u64,
}

impl fmt::Display for VisitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}.{}", self.entry_ts, self.station_id, self.seq, self.id)
    }
}

impl FromStr for VisitKey {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FilterError::Cursor(s.to_string());
        let mut it = s.split('.');
        let mut next = || it.next().ok_or_else(bad);
        let key = VisitKey {
            entry_ts: next()?.parse().map_err(|_| bad())?,
            station_id: next()?.parse().map_err(|_| bad())?,
            seq: next()?.parse().map_err(|_| bad())?,
            id: next()?.parse().map_err(|_| bad())?,
        };
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(key)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("time range is empty: from {from} > to {to}")]
    TimeRange { from: u32, to: u32 },
    #[error("weight range is invalid: {0}")]
    WeightRange(String),
    #[error("limit must be within 1..={MAX_PAGE}, got {0}")]
    Limit(usize),
    #[error("malformed cursor {0:?}")]
    Cursor(String),
    #[error("malformed tag {0:?}")]
    Tag(String),
}

/// Query parameters of `GET /visits` and `GET /export.csv`. All bounds are
/// inclusive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisitFilter {
    pub station: Option<u16>,
    /// `CCC_NNNNNNNNNNNN`, or `none` for untagged visits.
    pub tag: Option<String>,
    pub from: Option<u32>,
    pub to: Option<u32>,
    pub min_weight: Option<f64>,
    pub max_weight: Option<f64>,
    /// Upper bound on the stability-window standard deviation.
    pub max_std: Option<f64>,
    /// Drop visits carrying any quality flag.
    pub clean_only: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagMatch {
    Any,
    Untagged,
    Tag(TagId),
}

/// A filter checked once and then applied to many rows.
#[derive(Debug, Clone)]
pub struct ValidFilter {
    station: Option<u16>,
    tag: TagMatch,
    from: u32,
    to: u32,
    min_weight: f64,
    max_weight: f64,
    max_std: f64,
    clean_only: bool,
}

impl VisitFilter {
    pub fn validate(&self) -> Result<ValidFilter, FilterError> {
        let from = self.from.unwrap_or(0);
        let to = self.to.unwrap_or(u32::MAX);
        if from > to {
            return Err(FilterError::TimeRange { from, to });
        }
        let min_weight = self.min_weight.unwrap_or(f64::NEG_INFINITY);
        let max_weight = self.max_weight.unwrap_or(f64::INFINITY);
        if min_weight.is_nan() || max_weight.is_nan() || min_weight > max_weight {
            return Err(FilterError::WeightRange(format!("[{min_weight}, {max_weight}]")));
        }
        let max_std = self.max_std.unwrap_or(f64::INFINITY);
        if max_std.is_nan() || max_std < 0.0 {
            return Err(FilterError::WeightRange(format!("max_std {max_std}")));
        }
        let tag = match self.tag.as_deref() {
            None | Some("") => TagMatch::Any,
            Some("none") => TagMatch::Untagged,
            Some(s) => TagMatch::Tag(s.parse().map_err(|_| FilterError::Tag(s.to_string()))?),
        };
        Ok(ValidFilter {
            station: self.station,
            tag,
            from,
            to,
            min_weight,
            max_weight,
            max_std,
            clean_only: self.clean_only.unwrap_or(false),
        })
    }
}

impl ValidFilter {
    pub fn matches(&self, v: &StoredVisit) -> bool {
        self.station.is_none_or(|s| s == v.station_id)
            && match self.tag {
                TagMatch::Any => true,
                TagMatch::Untagged => v.tag.is_none(),
                TagMatch::Tag(t) => v.tag == Some(t),
            }
            && (self.from..=self.to).contains(&v.entry_ts)
            && v.weight_grams >= self.min_weight
            && v.weight_grams <= self.max_weight
            && v.std_grams <= self.max_std
            && (!self.clean_only || v.flags.bits() == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitPage {
    pub visits: Vec<StoredVisit>,
    /// Pass back as `cursor` to get the next page.
    pub next_cursor: Option<String>,
}

pub const CSV_HEADER: [&str; 7] = ["station_id", "seq", "tag", "entry_ts", "exit_ts", "weight_g", "std_g"];

pub(crate) fn csv_record(v: &StoredVisit) -> [String; 7] {
    [
        v.station_id.to_string(),
        v.seq.to_string(),
        v.tag.map(|t| t.to_string()).unwrap_or_default(),
        v.entry_ts.to_string(),
        v.exit_ts.to_string(),
        format!("{:.1}", v.weight_grams),
        format!("{:.1}", v.std_grams),
    ]
}
