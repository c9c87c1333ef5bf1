use std::collections::BTreeMap;

use rand::Rng;

use super::generate::{generate_trace, rng_for};
use super::scenario::{NoiseModel, Scenario, RAMP_MS};
use crate::rfid::{simulate_visit, TagId};
use crate::server::StoredVisit;
use crate::uplinkqueue::{simulate_delivery, DeliveryStats, LinkModel, QueueConfig, QueueError};
use crate::weighing::{WeighingConfig, WeighingEngine, WeighingEvent};

/// Burst rate of the "moving weight" laboratory condition.
pub const MOVING_BURST_RATE_HZ: f64 = 0.5;
const IDLE_BEFORE_MS: i64 = 3_000;
const IDLE_AFTER_MS: i64 = 4_000;

/// One laboratory weighing condition: a reference weight left still for
/// 10 s or moved around for 20 s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeighCondition {
    pub weight_grams: f64,
    pub moving: bool,
}

impl WeighCondition {
    pub fn plateau_ms(&self) -> i64 {
        if self.moving { 20_000 } else { 10_000 }
    }

    pub fn label(&self) -> String {
        let (kind, secs) = if self.moving { ("moving", 20) } else { ("stable", 10) };
        format!("{:.0} g {kind} {secs} s", self.weight_grams)
    }

    /// Single-visit scenario for one run of this condition.
    pub fn scenario(&self, seed: u64) -> Scenario {
        let noise = if self.moving { NoiseModel::default().moving(MOVING_BURST_RATE_HZ) } else { NoiseModel::default() };
        let entry = IDLE_BEFORE_MS;
        let exit = entry + RAMP_MS + self.plateau_ms();
        let mut sc = Scenario {
            name: self.label(),
            seed,
            duration_ms: exit + RAMP_MS + IDLE_AFTER_MS,
            noise,
            ..Scenario::default()
        };
        let a = sc.add_animal("ref", None, self.weight_grams);
        sc.add_visit(a, entry, exit);
        sc
    }
}

pub const TABLE_CONDITIONS: [WeighCondition; 6] = [
    WeighCondition { weight_grams: 40.0, moving: false },
    WeighCondition { weight_grams: 40.0, moving: true },
    WeighCondition { weight_grams: 50.0, moving: false },
    WeighCondition { weight_grams: 50.0, moving: true },
    WeighCondition { weight_grams: 100.0, moving: false },
    WeighCondition { weight_grams: 100.0, moving: true },
];

/// Weights of all visits the engine reports for a scenario's trace.
pub fn weigh(sc: &Scenario) -> Vec<f64> {
    let trace = generate_trace(sc).expect("fixture scenarios are valid");
    let mut engine = WeighingEngine::new(WeighingConfig::default());
    let mut out = Vec::new();
    let events = trace.samples.iter().flat_map(|s| engine.ingest(*s)).collect::<Vec<_>>();
    for ev in events.into_iter().chain(engine.flush()) {
        if let WeighingEvent::Visits(v) = ev {
            out.extend(v.iter().map(|v| v.weight_grams));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: WeighCondition,
    pub runs: usize,
    /// Runs that did not yield exactly one visit.
    pub missed: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableReport {
    pub rows: Vec<ConditionResult>,
    pub overall_mae: f64,
}

impl TableReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<22} {:>5} {:>7} {:>9} {:>9}\n", "condition", "runs", "missed", "mae [g]", "max [g]");
        for r in &self.rows {
            s += &format!(
                "{:<22} {:>5} {:>7} {:>9.3} {:>9.3}\n",
                r.condition.label(),
                r.runs,
                r.missed,
                r.mean_abs_error,
                r.max_abs_error
            );
        }
        s += &format!("{:<22} {:>5} {:>7} {:>9.3}\n", "overall", "", "", self.overall_mae);
        s
    }
}

fn run_seed(seed: u64, condition: usize, run: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((condition as u64) << 32) ^ run as u64
}

/// The laboratory weighing batch: every condition `runs` times, conditions
/// in parallel.
pub fn table_one(seed: u64, runs: usize) -> TableReport {
    let rows: Vec<ConditionResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = TABLE_CONDITIONS
            .iter()
            .enumerate()
            .map(|(ci, &condition)| {
                scope.spawn(move || {
                    let mut errors = Vec::with_capacity(runs);
                    let mut missed = 0;
                    for r in 0..runs {
                        match weigh(&condition.scenario(run_seed(seed, ci, r))).as_slice() {
                            [w] => errors.push((w - condition.weight_grams).abs()),
                            _ => missed += 1,
                        }
                    }
                    ConditionResult {
                        condition,
                        runs,
                        missed,
                        mean_abs_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
                        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });
    let n: usize = rows.iter().map(|r| r.runs - r.missed).sum();
    let total: f64 = rows.iter().map(|r| r.mean_abs_error * (r.runs - r.missed) as f64).sum();
    TableReport { overall_mae: total / n.max(1) as f64, rows }
}

/// Fraction of simulated visits (two passes each) with at least one read.
pub fn visit_detection_rate(p_detect: f64, visits: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, 7);
    let tag = TagId::new(756, 1).expect("valid tag");
    let hits = (0..visits)
        .filter(|&i| {
            let t = i as i64 * 60_000;
            !simulate_visit(tag, t, t + 30_000, 1, p_detect, &mut rng).is_empty()
        })
        .count();
    hits as f64 / visits.max(1) as f64
}

/// Queue plus lossy link for `packets` uplinks, one per `interval_ms`.
pub fn link_reliability(
    uplink_drop: f64,
    max_attempts: Option<u32>,
    packets: usize,
    interval_ms: i64,
    seed: u64,
) -> Result<DeliveryStats, QueueError> {
    let link = LinkModel { uplink_drop, ..LinkModel::lossless() };
    let cfg = QueueConfig { max_attempts, ..QueueConfig::default() };
    let horizon = packets as i64 * interval_ms + 7 * 86_400_000;
    simulate_delivery(packets, interval_ms, cfg, &link, horizon, &mut rng_for(seed, 8))
}

/// Weight-gain season: two tagged animals visit a few times every night
/// while their weight drifts by `trend_grams_per_day`. The trace only
/// covers the visits.
pub fn torpor_scenario(seed: u64, days: u32, trend_grams_per_day: f64) -> Scenario {
    let mut sc = Scenario {
        name: format!("torpor {days} d"),
        seed,
        duration_ms: days as i64 * super::scenario::DAY_MS,
        sparse: true,
        p_detect: 0.965,
        noise: NoiseModel::default().moving(0.2),
        ..Scenario::default()
    };
    let animals = [
        sc.add_animal("m1", Some(TagId::new(756, 98_000_101).unwrap()), 48.0),
        sc.add_animal("f1", Some(TagId::new(756, 98_000_102).unwrap()), 55.0),
    ];
    for a in &mut sc.animals {
        a.trend_grams_per_day = trend_grams_per_day;
    }
    let mut rng = rng_for(seed, 9);
    for day in 0..days as i64 {
        // nights run 19:00 to 05:00; evenly spaced slots, jittered
        let night = day * super::scenario::DAY_MS + 19 * 3_600_000;
        let slots = 8;
        let slot_ms = 10 * 3_600_000 / slots;
        for k in 0..slots {
            let start = night + k * slot_ms + rng.random_range(0..slot_ms / 2);
            let stay = rng.random_range(15_000..120_000);
            if start + stay + RAMP_MS + 10_000 < sc.duration_ms {
                sc.add_visit(animals[k as usize % 2], start, start + stay);
            }
        }
    }
    sc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyStats {
    pub day: i64,
    pub visits: usize,
    pub min_grams: f64,
    pub avg_grams: f64,
    pub max_grams: f64,
}

/// Per-day weight summary of one tag's stored visits.
pub fn daily_series(visits: &[StoredVisit], tag: Option<TagId>, epoch_s: u32) -> Vec<DailyStats> {
    let mut days: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for v in visits.iter().filter(|v| v.tag == tag) {
        let day = (v.entry_ts as i64 - epoch_s as i64).div_euclid(86_400);
        days.entry(day).or_default().push(v.weight_grams);
    }
    days.into_iter()
        .map(|(day, w)| DailyStats {
            day,
            visits: w.len(),
            min_grams: w.iter().copied().fold(f64::INFINITY, f64::min),
            avg_grams: w.iter().sum::<f64>() / w.len() as f64,
            max_grams: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

/// Least-squares slope of the daily averages, grams per day.
pub fn trend_slope(series: &[DailyStats]) -> Option<f64> {
    if series.len() < 2 {
        return None;
    }
    let n = series.len() as f64;
    let mx = series.iter().map(|d| d.day as f64).sum::<f64>() / n;
    let my = series.iter().map(|d| d.avg_grams).sum::<f64>() / n;
    let sxy: f64 = series.iter().map(|d| (d.day as f64 - mx) * (d.avg_grams - my)).sum();
    let sxx: f64 = series.iter().map(|d| (d.day as f64 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// The scripted night used for end-to-end checks: three tagged animals,
/// single visits and overlapping pairs, on a lossy link.
pub fn one_night_scenario(seed: u64) -> Scenario {
    let mut sc = Scenario {
        name: "one night".into(),
        seed,
        duration_ms: 12 * 3_600_000,
        noise: NoiseModel::default().moving(0.3),
        p_detect: 1.0,
        link: LinkModel { uplink_drop: 0.1418, ack_drop: 0.05, latency_ms: 1_000 },
        ..Scenario::default()
    };
    let a = sc.add_animal("a", Some(TagId::new(756, 110_000_401).unwrap()), 41.3);
    let b = sc.add_animal("b", Some(TagId::new(756, 110_000_402).unwrap()), 52.7);
    let c = sc.add_animal("c", Some(TagId::new(756, 110_000_403).unwrap()), 63.9);
    let m = |h: f64| (h * 3_600_000.0).round() as i64;
    let s = |x: i64| x * 1000;
    // (animal, entry, exit): single visits first, then overlaps shaped
    // like 0 / 40 / 92 / 52 / 0
    let script = [
        (a, m(0.5), m(0.5) + s(45)),
        (b, m(1.1), m(1.1) + s(80)),
        (c, m(1.7), m(1.7) + s(30)),
        (a, m(2.4), m(2.4) + s(60)),
        (b, m(2.4) + s(25), m(2.4) + s(110)),
        (c, m(3.3), m(3.3) + s(95)),
        (a, m(3.3) + s(40), m(3.3) + s(70)),
        (b, m(4.8), m(4.8) + s(20)),
        (a, m(5.6), m(5.6) + s(120)),
        (c, m(5.6) + s(30), m(5.6) + s(90)),
        (b, m(5.6) + s(50), m(5.6) + s(75)),
        (c, m(7.2), m(7.2) + s(40)),
        (a, m(8.9), m(8.9) + s(55)),
        (b, m(9.5), m(9.5) + s(65)),
        (b, m(10.6), m(10.6) + s(45)),
        (c, m(10.6) + s(20), m(10.6) + s(100)),
        (a, m(11.4), m(11.4) + s(35)),
    ];
    for (animal, entry, exit) in script {
        sc.add_visit(animal, entry, exit);
    }
    sc
}
