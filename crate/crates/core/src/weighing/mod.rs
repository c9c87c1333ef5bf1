//! Load-cell signal processing: state-based weighing of animals on the
//! feeding platform.
//!
//! The engine consumes the 20 Hz scale signal one sample at a time and
//! segments it into measurement periods separated by weight shifts.
//! Only samples inside stability windows contribute to a period's weight;
//! per-animal weights are recovered from the shifts between periods once
//! the platform is empty again.

mod attribution;
mod engine;
mod stability;
pub mod trace;

pub use attribution::{attribute_weights, Attribution, AttributionError, PeriodSummary, ShiftEvent, ShiftKind};
pub use engine::{WeighingEngine, WeighingEvent, ZeroError};
pub use stability::{find_stability_windows, stable_weight, MeasurementPeriod, StableWeight};

use serde::{Deserialize, Serialize};

use crate::rfid::TagId;

/// One load-cell reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSample {
    /// Milliseconds, station clock.
    pub t: i64,
    pub grams: f64,
}

impl WeightSample {
    pub fn new(t: i64, grams: f64) -> Self {
        Self { t, grams }
    }
}

/// Inclusive sample index range with the statistics of its samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityWindow {
    pub start_index: usize,
    pub end_index: usize,
    pub mean_grams: f64,
    pub std_grams: f64,
}

impl StabilityWindow {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Weighing state. `Entrance` and `Exit` are transient: they are entered
/// and left within a single ingest step and surface only as events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleState {
    Idle,
    Entrance,
    Weighing,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisitFlags {
    /// No exit shift matched the entrance shift within tolerance.
    pub unresolved: bool,
    /// A period next to one of the visit's shifts had no stability window.
    pub low_quality: bool,
    /// Another tag was read almost as close to the visit as the assigned one.
    pub ambiguous_tag: bool,
}

impl VisitFlags {
    pub fn bits(&self) -> u8 {
        (self.unresolved as u8) | (self.low_quality as u8) << 1 | (self.ambiguous_tag as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Self {
        Self {
            unresolved: bits & 1 != 0,
            low_quality: bits & 2 != 0,
            ambiguous_tag: bits & 4 != 0,
        }
    }
}

/// One animal's stay on the platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimalVisit {
    pub tag: Option<TagId>,
    /// Milliseconds, station clock.
    pub entry_ts: i64,
    pub exit_ts: i64,
    pub weight_grams: f64,
    pub quality_std_grams: f64,
    pub station_id: u16,
    pub flags: VisitFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeighingConfig {
    pub station_id: u16,
    pub sample_rate_hz: u32,
    /// Weight shift that counts as an animal entering or leaving.
    pub entrance_grams: f64,
    /// Largest step between consecutive samples inside a stability window.
    pub stability_delta_grams: f64,
    pub stability_seconds: f64,
    /// Length of the moving window used to detect state changes.
    pub window_seconds: f64,
    /// Exit and entrance shifts within this distance belong to the same animal.
    pub pairing_tolerance_grams: f64,
    pub min_grams: f64,
    pub max_grams: f64,
    /// Largest tare correction per 10 s of idle time.
    pub zero_rate_grams_per_10s: f64,
    pub idle_history_seconds: f64,
    /// Idle time after the last exit before visits are finalized.
    pub settle_seconds: f64,
}

impl Default for WeighingConfig {
    fn default() -> Self {
        Self {
            station_id: 1,
            sample_rate_hz: 20,
            entrance_grams: 20.0,
            stability_delta_grams: 1.0,
            stability_seconds: 1.0,
            window_seconds: 1.0,
            pairing_tolerance_grams: 2.0,
            min_grams: -50.0,
            max_grams: 6000.0,
            zero_rate_grams_per_10s: 1.0,
            idle_history_seconds: 10.0,
            settle_seconds: 2.0,
        }
    }
}

impl WeighingConfig {
    pub(crate) fn samples_for(&self, seconds: f64) -> usize {
        ((seconds * self.sample_rate_hz as f64).round() as usize).max(1)
    }

    pub fn stability_len(&self) -> usize {
        self.samples_for(self.stability_seconds)
    }

    pub fn window_len(&self) -> usize {
        self.samples_for(self.window_seconds)
    }
}
