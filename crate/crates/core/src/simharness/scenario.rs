use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::rfid::TagId;
use crate::uplinkqueue::LinkModel;

/// Linear entrance and exit ramp.
pub const RAMP_MS: i64 = 500;
pub const MAX_SIMULTANEOUS: usize = 3;
pub const MIN_WEIGHT_GRAMS: f64 = 10.0;
pub const MAX_WEIGHT_GRAMS: f64 = 200.0;
pub const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{count} animals on the platform at {at_ms} ms (at most {MAX_SIMULTANEOUS})")]
    TooManyAnimals { at_ms: i64, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Load-cell error model applied on top of the true load.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// White noise per sample.
    pub sigma_grams: f64,
    /// Mean rate of movement bursts while an animal sits still.
    pub burst_rate_hz: f64,
    /// Burst amplitude bound.
    pub burst_max_grams: f64,
    pub burst_min_ms: i64,
    pub burst_max_ms: i64,
    /// Per-run gain error, standard deviation as a fraction of load.
    pub gain_sigma: f64,
    /// Per-run zero offset, standard deviation.
    pub offset_sigma_grams: f64,
    /// Creep reached under constant load, as a fraction of the load.
    pub creep_fraction: f64,
    pub creep_tau_ms: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_grams: 0.3,
            burst_rate_hz: 0.0,
            burst_max_grams: 15.0,
            burst_min_ms: 200,
            burst_max_ms: 900,
            gain_sigma: 0.007,
            offset_sigma_grams: 0.2,
            creep_fraction: 0.0005,
            creep_tau_ms: 5_000.0,
        }
    }
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        Self {
            sigma_grams: 0.0,
            burst_rate_hz: 0.0,
            gain_sigma: 0.0,
            offset_sigma_grams: 0.0,
            creep_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn moving(mut self, rate_hz: f64) -> Self {
        self.burst_rate_hz = rate_hz;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Animal {
    pub name: String,
    pub tag: Option<TagId>,
    pub weight_grams: f64,
    /// Weight change per day of scenario time.
    pub trend_grams_per_day: f64,
}

impl Animal {
    pub fn weight_at(&self, t_ms: i64) -> f64 {
        self.weight_grams + self.trend_grams_per_day * t_ms.div_euclid(DAY_MS) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledVisit {
    pub animal: usize,
    /// Start of the entrance ramp.
    pub entry_ms: i64,
    /// Start of the exit ramp.
    pub exit_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_ms: i64,
    pub noise: NoiseModel,
    pub p_detect: f64,
    pub link: LinkModel,
    /// Total transmissions per uplink; `None` retries forever.
    pub max_attempts: Option<u32>,
    /// Only emit samples around visits; idle stretches are skipped.
    pub sparse: bool,
    /// Inside humidity jumps to 95 % from this time on.
    pub humidity_fault_ms: Option<i64>,
    /// Tag reader silent in `[from, to)`.
    pub rfid_outage_ms: Option<(i64, i64)>,
    pub animals: Vec<Animal>,
    pub visits: Vec<ScheduledVisit>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 0,
            duration_ms: 3_600_000,
            noise: NoiseModel::default(),
            p_detect: 0.885,
            link: LinkModel::lossless(),
            max_attempts: None,
            sparse: false,
            humidity_fault_ms: None,
            rfid_outage_ms: None,
            animals: Vec::new(),
            visits: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn add_animal(&mut self, name: &str, tag: Option<TagId>, weight_grams: f64) -> usize {
        self.animals.push(Animal { name: name.into(), tag, weight_grams, trend_grams_per_day: 0.0 });
        self.animals.len() - 1
    }

    pub fn add_visit(&mut self, animal: usize, entry_ms: i64, exit_ms: i64) {
        self.visits.push(ScheduledVisit { animal, entry_ms, exit_ms });
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.duration_ms <= 0 {
            return invalid(format!("duration {} ms", self.duration_ms));
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return invalid(format!("p_detect {} outside [0, 1]", self.p_detect));
        }
        self.link.validate().map_err(ScenarioError::Invalid)?;
        if self.max_attempts == Some(0) {
            return invalid("max_attempts must be at least 1".into());
        }
        let n = &self.noise;
        let nonneg = [
            n.sigma_grams,
            n.burst_rate_hz,
            n.burst_max_grams,
            n.gain_sigma,
            n.offset_sigma_grams,
            n.creep_fraction,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("noise parameters must be finite and non-negative".into());
        }
        if n.burst_max_grams >= 20.0 {
            return invalid(format!("burst amplitude {} g would look like an animal", n.burst_max_grams));
        }
        if !(0 < n.burst_min_ms && n.burst_min_ms <= n.burst_max_ms && n.burst_max_ms < 1000) {
            return invalid("bursts must last between 1 ms and 1 s".into());
        }
        if n.creep_tau_ms <= 0.0 {
            return invalid("creep_tau_ms must be positive".into());
        }
        for a in &self.animals {
            for day_ms in [0, self.duration_ms] {
                let w = a.weight_at(day_ms);
                if !(w > MIN_WEIGHT_GRAMS && w < MAX_WEIGHT_GRAMS) {
                    return invalid(format!("{} weighs {w} g, outside ({MIN_WEIGHT_GRAMS}, {MAX_WEIGHT_GRAMS})", a.name));
                }
            }
        }
        for v in &self.visits {
            if v.animal >= self.animals.len() {
                return invalid(format!("visit refers to animal #{}", v.animal));
            }
            if v.entry_ms < 0 || v.exit_ms + RAMP_MS > self.duration_ms {
                return invalid(format!("visit {}..{} ms outside the scenario", v.entry_ms, v.exit_ms));
            }
            if v.exit_ms < v.entry_ms + RAMP_MS {
                return invalid(format!("visit at {} ms ends before its ramp", v.entry_ms));
            }
        }
        let mut edges: Vec<(i64, i32)> = self.visits.iter().flat_map(|v| [(v.entry_ms, 1), (v.exit_ms + RAMP_MS, -1)]).collect();
        edges.sort_by_key(|&(t, d)| (t, d));
        let mut count = 0i32;
        for (t, d) in edges {
            count += d;
            if count as usize > MAX_SIMULTANEOUS {
                return Err(ScenarioError::TooManyAnimals { at_ms: t, count: count as usize });
            }
        }
        for (i, a) in self.visits.iter().enumerate() {
            for b in &self.visits[i + 1..] {
                if a.animal == b.animal && a.entry_ms < b.exit_ms + RAMP_MS && b.entry_ms < a.exit_ms + RAMP_MS {
                    return invalid(format!("{} visits twice at once", self.animals[a.animal].name));
                }
            }
        }
        Ok(())
    }

    /// Parse the scenario text format; see `docs/scenario-format.md`.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut sc = Scenario::default();
        let mut names: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| ScenarioError::Parse { line, message };
            if let Some((key, value)) = body.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                macro_rules! num {
                    () => {
                        value.parse().map_err(|e| err(format!("{key}: {e}")))?
                    };
                }
                let secs = |v: f64| (v * 1000.0).round() as i64;
                match key {
                    "name" => sc.name = value.to_string(),
                    "seed" => sc.seed = num!(),
                    "duration_s" => sc.duration_ms = secs(num!()),
                    "p_detect" => sc.p_detect = num!(),
                    "noise_sigma_g" => sc.noise.sigma_grams = num!(),
                    "burst_rate_hz" => sc.noise.burst_rate_hz = num!(),
                    "burst_max_g" => sc.noise.burst_max_grams = num!(),
                    "burst_min_ms" => sc.noise.burst_min_ms = num!(),
                    "burst_max_ms" => sc.noise.burst_max_ms = num!(),
                    "gain_sigma" => sc.noise.gain_sigma = num!(),
                    "offset_sigma_g" => sc.noise.offset_sigma_grams = num!(),
                    "creep_fraction" => sc.noise.creep_fraction = num!(),
                    "creep_tau_ms" => sc.noise.creep_tau_ms = num!(),
                    "link_uplink_drop" => sc.link.uplink_drop = num!(),
                    "link_ack_drop" => sc.link.ack_drop = num!(),
                    "link_latency_ms" => sc.link.latency_ms = num!(),
                    "max_attempts" => {
                        let v: u32 = num!();
                        sc.max_attempts = (v > 0).then_some(v);
                    }
                    "sparse" => sc.sparse = num!(),
                    "humidity_fault_s" => sc.humidity_fault_ms = Some(secs(num!())),
                    "rfid_outage_s" => {
                        let (a, b) = value.split_once(char::is_whitespace).ok_or_else(|| err("rfid_outage_s takes `from to`".into()))?;
                        let a: f64 = a.trim().parse().map_err(|e| err(format!("{key}: {e}")))?;
                        let b: f64 = b.trim().parse().map_err(|e| err(format!("{key}: {e}")))?;
                        sc.rfid_outage_ms = Some((secs(a), secs(b)));
                    }
                    _ => return Err(err(format!("unknown key {key:?}"))),
                }
                continue;
            }
            let words: Vec<&str> = body.split_whitespace().collect();
            match words.as_slice() {
                ["animal", name, tag, weight, rest @ ..] if rest.len() <= 1 => {
                    if names.contains_key(*name) {
                        return Err(err(format!("animal {name} defined twice")));
                    }
                    let tag = match *tag {
                        "untagged" => None,
                        t => Some(t.parse::<TagId>().map_err(|e| err(format!("tag {t:?}: {e}")))?),
                    };
                    let weight: f64 = weight.parse().map_err(|e| err(format!("weight: {e}")))?;
                    let trend: f64 = match rest.first() {
                        Some(t) => t.parse().map_err(|e| err(format!("trend: {e}")))?,
                        None => 0.0,
                    };
                    let idx = sc.add_animal(name, tag, weight);
                    sc.animals[idx].trend_grams_per_day = trend;
                    names.insert(name.to_string(), idx);
                }
                ["visit", name, entry, exit] => {
                    let idx = *names.get(*name).ok_or_else(|| err(format!("unknown animal {name}")))?;
                    let entry: f64 = entry.parse().map_err(|e| err(format!("entry: {e}")))?;
                    let exit: f64 = exit.parse().map_err(|e| err(format!("exit: {e}")))?;
                    sc.add_visit(idx, (entry * 1000.0).round() as i64, (exit * 1000.0).round() as i64);
                }
                _ => return Err(err(format!("cannot parse {body:?}"))),
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
