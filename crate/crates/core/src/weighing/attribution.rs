use thiserror::Error;

use super::{StableWeight, VisitFlags};

/// Condensed view of one measurement period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSummary {
    pub start_ts: i64,
    pub end_ts: i64,
    pub stable: Option<StableWeight>,
    /// Best level estimate when no stability window exists.
    pub fallback_level: f64,
    /// Standard deviation of all samples, stable or not.
    pub raw_std_grams: f64,
}

impl PeriodSummary {
    pub fn level(&self) -> f64 {
        self.stable.map_or(self.fallback_level, |s| s.grams)
    }

    /// Period with a known stable weight; handy for tests and replays.
    pub fn stable_at(grams: f64) -> Self {
        Self {
            start_ts: 0,
            end_ts: 0,
            stable: Some(StableWeight { grams, std_grams: 0.0 }),
            fallback_level: grams,
            raw_std_grams: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Entrance,
    /// `animals` leave together; more than one only when the platform
    /// returns to its baseline.
    Exit { animals: u32 },
}

/// Weight shift between period `i` and `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftEvent {
    pub ts: i64,
    pub kind: ShiftKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub entry_ts: i64,
    pub exit_ts: i64,
    pub weight_grams: f64,
    pub quality_std_grams: f64,
    pub flags: VisitFlags,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttributionError {
    #[error("{periods} periods cannot surround {events} events")]
    Shape { periods: usize, events: usize },
    #[error("exit at {ts} with no animal present")]
    ExitWithoutAnimal { ts: i64 },
    #[error("{0} animal(s) still present at the end of the episode")]
    Unfinished(usize),
}

struct Animal {
    entry_ts: i64,
    exit_ts: Option<i64>,
    weight: f64,
    std: f64,
    flags: VisitFlags,
}

/// Per-animal weights from the shifts between consecutive periods.
///
/// Each entrance shift is one animal's weight. Each exit is paired with a
/// present animal whose weight matches the exit shift within `tolerance`
/// grams, the earliest entered one first; without such a match the closest
/// animal is taken and flagged unresolved. Output is in entrance order.
pub fn attribute_weights(
    periods: &[PeriodSummary],
    events: &[ShiftEvent],
    tolerance: f64,
) -> Result<Vec<Attribution>, AttributionError> {
    if periods.len() != events.len() + 1 {
        return Err(AttributionError::Shape { periods: periods.len(), events: events.len() });
    }

    let mut animals: Vec<Animal> = Vec::new();
    let mut present: Vec<usize> = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        let (before, after) = (&periods[i], &periods[i + 1]);
        let shift = after.level() - before.level();
        let low_quality = before.stable.is_none() || after.stable.is_none();
        match ev.kind {
            ShiftKind::Entrance => {
                animals.push(Animal {
                    entry_ts: ev.ts,
                    exit_ts: None,
                    weight: shift,
                    std: after.stable.map_or(after.raw_std_grams, |s| s.std_grams),
                    flags: VisitFlags { low_quality, ..VisitFlags::default() },
                });
                present.push(animals.len() - 1);
            }
            ShiftKind::Exit { animals: leaving } => {
                if present.is_empty() {
                    return Err(AttributionError::ExitWithoutAnimal { ts: ev.ts });
                }
                let leaving = leaving.max(1) as usize;
                if leaving >= present.len() {
                    let total: f64 = present.iter().map(|&a| animals[a].weight).sum();
                    let resolved = (total + shift).abs() <= tolerance * present.len() as f64;
                    for a in present.drain(..) {
                        let animal = &mut animals[a];
                        animal.exit_ts = Some(ev.ts);
                        animal.flags.unresolved |= !resolved;
                        animal.flags.low_quality |= low_quality;
                    }
                } else if leaving == 1 {
                    let drop = -shift;
                    let within = present
                        .iter()
                        .position(|&a| (animals[a].weight - drop).abs() <= tolerance);
                    let (slot, resolved) = match within {
                        Some(slot) => (slot, true),
                        None => {
                            let mut best = 0;
                            for (k, &a) in present.iter().enumerate() {
                                if (animals[a].weight - drop).abs() < (animals[present[best]].weight - drop).abs() {
                                    best = k;
                                }
                            }
                            (best, false)
                        }
                    };
                    let a = present.remove(slot);
                    let animal = &mut animals[a];
                    animal.exit_ts = Some(ev.ts);
                    animal.flags.unresolved |= !resolved;
                    animal.flags.low_quality |= low_quality;
                } else {
                    // Several, but not all, leaving at once: no shift identifies them.
                    for a in present.drain(..leaving) {
                        let animal = &mut animals[a];
                        animal.exit_ts = Some(ev.ts);
                        animal.flags.unresolved = true;
                        animal.flags.low_quality |= low_quality;
                    }
                }
            }
        }
    }
    if !present.is_empty() {
        return Err(AttributionError::Unfinished(present.len()));
    }

    Ok(animals
        .into_iter()
        .map(|a| Attribution {
            entry_ts: a.entry_ts,
            exit_ts: a.exit_ts.unwrap_or(a.entry_ts),
            weight_grams: a.weight,
            quality_std_grams: a.std,
            flags: a.flags,
        })
        .collect())
}
