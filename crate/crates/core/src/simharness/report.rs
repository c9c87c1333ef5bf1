use std::fmt::Write as _;

use super::generate::TruthVisit;
use super::scenario::Scenario;
use super::world::{LinkStats, ScenarioRun};
use crate::codec::MessageType;
use crate::server::StoredVisit;
use crate::station::{RunSummary, StationLog};

/// Truth and server visits further apart than this are never paired.
const MATCH_TOLERANCE_S: f64 = 3.0;
const Z95: f64 = 1.959_964;

/// Point estimate with a 95 % interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Wilson score interval of a binomial proportion.
    pub fn wilson(successes: usize, n: usize) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let (k, n) = (successes as f64, n as f64);
        let p = k / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Some(Self { estimate: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) })
    }

    /// Normal-approximation interval of a mean.
    pub fn mean(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { estimate: mean, lo: (mean - half).max(0.0), hi: mean + half })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimalReport {
    pub name: String,
    pub tag: String,
    pub visits: usize,
    pub matched: usize,
    pub mean_abs_error_grams: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub truth_visits: usize,
    pub station_visits: usize,
    pub server_visits: usize,
    pub matched_visits: usize,
    pub missed_visits: usize,
    pub spurious_visits: usize,
    /// Absolute weight error over matched visits.
    pub weight_error: Option<Interval>,
    pub max_weight_error: f64,
    pub tagged_visits: usize,
    /// Tagged visits with at least one tag read.
    pub detection_rate: Option<Interval>,
    /// Matched tagged visits that reached the server with their own tag.
    pub tag_accuracy: Option<Interval>,
    /// Visits reported with a tag that was not theirs.
    pub wrong_tags: usize,
    pub uplinks: usize,
    pub uplinks_received: usize,
    pub delivered_fraction: Option<Interval>,
    pub transmissions: usize,
    pub parked: usize,
    pub drained: bool,
    pub system_updates: usize,
    pub expected_system_updates: usize,
    pub captures: usize,
    pub animals: Vec<AnimalReport>,
}

/// Pair truth and server visits: closest first, within tolerance.
pub fn match_visits(truth: &[TruthVisit], server: &[StoredVisit], epoch_s: u32) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        let entry = epoch_s as f64 + t.entry_ms as f64 / 1000.0;
        let exit = epoch_s as f64 + t.exit_ms as f64 / 1000.0;
        for (j, s) in server.iter().enumerate() {
            let de = (s.entry_ts as f64 - entry).abs();
            let dx = (s.exit_ts as f64 - exit).abs();
            if de <= MATCH_TOLERANCE_S && dx <= MATCH_TOLERANCE_S {
                let cost = de + dx + (s.weight_grams - t.weight_grams).abs() / 10.0;
                pairs.push((cost, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_s = vec![false; server.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_t[i] && !used_s[j] {
            used_t[i] = true;
            used_s[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

fn expected_system_updates(duration_ms: i64, period_s: u32) -> usize {
    (duration_ms.max(0) / (period_s as i64 * 1000)) as usize
}

impl ScenarioReport {
    pub fn from_run(sc: &Scenario, run: &ScenarioRun, epoch_s: u32, period_s: u32) -> Self {
        let truth = &run.trace.truth;
        let server = &run.server_visits;
        let pairs = match_visits(truth, server, epoch_s);
        let errors: Vec<f64> = pairs.iter().map(|&(i, j)| (server[j].weight_grams - truth[i].weight_grams).abs()).collect();
        let tagged: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].tag.is_some()).collect();
        let read = tagged.iter().filter(|&&i| truth[i].read).count();
        let matched_tagged: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(i, _)| truth[i].tag.is_some()).collect();
        let correct = matched_tagged.iter().filter(|&&(i, j)| server[j].tag == truth[i].tag).count();
        let wrong_tags = pairs.iter().filter(|&&(i, j)| server[j].tag.is_some() && server[j].tag != truth[i].tag).count();

        let animals = sc
            .animals
            .iter()
            .enumerate()
            .map(|(a, animal)| {
                let errs: Vec<f64> = pairs
                    .iter()
                    .zip(&errors)
                    .filter(|((i, _), _)| truth[*i].animal == a)
                    .map(|(_, e)| *e)
                    .collect();
                AnimalReport {
                    name: animal.name.clone(),
                    tag: animal.tag.map_or_else(|| "untagged".to_string(), |t| t.to_string()),
                    visits: truth.iter().filter(|t| t.animal == a).count(),
                    matched: errs.len(),
                    mean_abs_error_grams: Interval::mean(&errs).map(|i| i.estimate),
                }
            })
            .collect();

        let mut report = Self::base(&sc.name, sc.seed, sc.duration_ms, &run.summary, &run.log, server, run.link, period_s);
        report.truth_visits = truth.len();
        report.matched_visits = pairs.len();
        report.missed_visits = truth.len() - pairs.len();
        report.spurious_visits = server.len() - pairs.len();
        report.weight_error = Interval::mean(&errors);
        report.max_weight_error = errors.iter().copied().fold(0.0, f64::max);
        report.tagged_visits = tagged.len();
        report.detection_rate = Interval::wilson(read, tagged.len());
        report.tag_accuracy = Interval::wilson(correct, matched_tagged.len());
        report.wrong_tags = wrong_tags;
        report.animals = animals;
        report
    }

    /// Report without ground truth, e.g. for a replayed trace.
    #[allow(clippy::too_many_arguments)]
    pub fn base(
        name: &str,
        seed: u64,
        duration_ms: i64,
        summary: &RunSummary,
        log: &StationLog,
        server: &[StoredVisit],
        link: LinkStats,
        period_s: u32,
    ) -> Self {
        let uplinks = log.uplinks.len();
        Self {
            name: name.to_string(),
            seed,
            duration_s: duration_ms as f64 / 1000.0,
            truth_visits: 0,
            station_visits: summary.visits,
            server_visits: server.len(),
            matched_visits: 0,
            missed_visits: 0,
            spurious_visits: 0,
            weight_error: None,
            max_weight_error: 0.0,
            tagged_visits: 0,
            detection_rate: None,
            tag_accuracy: None,
            wrong_tags: 0,
            uplinks,
            uplinks_received: link.first_receptions,
            delivered_fraction: Interval::wilson(link.first_receptions.min(uplinks), uplinks),
            transmissions: link.transmissions,
            parked: summary.parked,
            drained: summary.drained,
            system_updates: log.count(MessageType::SystemUpdate),
            expected_system_updates: expected_system_updates(duration_ms, period_s),
            captures: summary.captures,
            animals: Vec::new(),
        }
    }

    /// `key=value` lines, stable across runs with the same inputs.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let interval = |i: &Option<Interval>, digits: usize| match i {
            Some(i) => (format!("{:.*}", digits, i.estimate), format!("{:.*}", digits, i.lo), format!("{:.*}", digits, i.hi)),
            None => ("na".into(), "na".into(), "na".into()),
        };
        kv("scenario", self.name.replace(char::is_whitespace, "_"));
        kv("seed", self.seed.to_string());
        kv("duration_s", format!("{:.3}", self.duration_s));
        kv("truth_visits", self.truth_visits.to_string());
        kv("station_visits", self.station_visits.to_string());
        kv("server_visits", self.server_visits.to_string());
        kv("matched_visits", self.matched_visits.to_string());
        kv("missed_visits", self.missed_visits.to_string());
        kv("spurious_visits", self.spurious_visits.to_string());
        for (key, value, digits) in [
            ("weight_mae_g", &self.weight_error, 3),
            ("detection_rate", &self.detection_rate, 4),
            ("tag_accuracy", &self.tag_accuracy, 4),
            ("delivered_fraction", &self.delivered_fraction, 4),
        ] {
            let (e, lo, hi) = interval(value, digits);
            kv(key, e);
            kv(&format!("{key}_ci_lo"), lo);
            kv(&format!("{key}_ci_hi"), hi);
        }
        kv("weight_max_error_g", format!("{:.3}", self.max_weight_error));
        kv("tagged_visits", self.tagged_visits.to_string());
        kv("wrong_tags", self.wrong_tags.to_string());
        kv("uplinks", self.uplinks.to_string());
        kv("uplinks_received", self.uplinks_received.to_string());
        kv("transmissions", self.transmissions.to_string());
        kv("parked", self.parked.to_string());
        kv("drained", self.drained.to_string());
        kv("system_updates", self.system_updates.to_string());
        kv("expected_system_updates", self.expected_system_updates.to_string());
        kv("captures", self.captures.to_string());
        for a in &self.animals {
            let mae = a.mean_abs_error_grams.map_or("na".into(), |m| format!("{m:.3}"));
            kv(&format!("animal.{}", a.name), format!("tag={} visits={} matched={} mae_g={mae}", a.tag, a.visits, a.matched));
        }
        s
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let pct = |i: &Option<Interval>| match i {
            Some(i) => format!("{:6.2} %  [{:.2}, {:.2}]", i.estimate * 100.0, i.lo * 100.0, i.hi * 100.0),
            None => "n/a".into(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {}, {:.0} s)", self.name, self.seed, self.duration_s);
        let _ = writeln!(s, "{:-<60}", "");
        let rows: Vec<(&str, String)> = vec![
            ("visits (truth/station/server)", format!("{} / {} / {}", self.truth_visits, self.station_visits, self.server_visits)),
            ("matched / missed / spurious", format!("{} / {} / {}", self.matched_visits, self.missed_visits, self.spurious_visits)),
            (
                "weight error",
                match self.weight_error {
                    Some(i) => format!("{:.3} g  [{:.3}, {:.3}]  max {:.3} g", i.estimate, i.lo, i.hi, self.max_weight_error),
                    None => "n/a".into(),
                },
            ),
            ("tag detection", pct(&self.detection_rate)),
            ("tag attribution", pct(&self.tag_accuracy)),
            ("wrong tags", self.wrong_tags.to_string()),
            ("link delivery", pct(&self.delivered_fraction)),
            ("uplinks / transmissions", format!("{} / {}", self.uplinks, self.transmissions)),
            ("queue drained", format!("{} ({} parked)", self.drained, self.parked)),
            ("status uplinks", format!("{} (expected {})", self.system_updates, self.expected_system_updates)),
            ("captures", self.captures.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<30} {v}");
        }
        if !self.animals.is_empty() {
            let _ = writeln!(s, "{:-<60}", "");
            let _ = writeln!(s, "{:<10} {:<17} {:>6} {:>7} {:>8}", "animal", "tag", "visits", "matched", "mae [g]");
            for a in &self.animals {
                let mae = a.mean_abs_error_grams.map_or("n/a".into(), |m| format!("{m:.3}"));
                let _ = writeln!(s, "{:<10} {:<17} {:>6} {:>7} {:>8}", a.name, a.tag, a.visits, a.matched, mae);
            }
        }
        s
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.to_table(), self.to_lines())
    }
}
