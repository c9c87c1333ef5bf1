use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::scenario::{Scenario, ScenarioError, ScheduledVisit, RAMP_MS};
use crate::rfid::{simulate_pass, RfidDetection, TagId};
use crate::station::{EnvReading, StationInput};
use crate::weighing::WeightSample;

pub const SAMPLE_PERIOD_MS: i64 = 50;
/// Idle margin kept around visits in sparse traces.
const SPARSE_MARGIN_MS: i64 = 5_000;
/// Bursts keep this far from any load change.
const BURST_CLEARANCE_MS: i64 = 1_500;
const BURST_MIN_GAP_MS: f64 = 1_200.0;
/// Latest tag read after a ramp starts.
const PASS_JITTER_MS: i64 = 300;

pub(crate) const STREAM_NOISE: u64 = 1;
pub(crate) const STREAM_RFID: u64 = 2;
pub(crate) const STREAM_LINK: u64 = 3;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A visit as scheduled, with the weight the animal had that day.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthVisit {
    pub animal: usize,
    pub tag: Option<TagId>,
    pub entry_ms: i64,
    pub exit_ms: i64,
    pub weight_grams: f64,
    /// At least one pass of a tagged animal was read.
    pub read: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start_ms: i64,
    pub duration_ms: i64,
    pub amplitude_grams: f64,
}

impl Burst {
    fn value(&self, t: i64) -> f64 {
        if t < self.start_ms || t >= self.start_ms + self.duration_ms {
            return 0.0;
        }
        let phase = (t - self.start_ms) as f64 / self.duration_ms as f64;
        self.amplitude_grams * (std::f64::consts::TAU * phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrace {
    pub samples: Vec<WeightSample>,
    pub detections: Vec<RfidDetection>,
    pub truth: Vec<TruthVisit>,
    pub bursts: Vec<Burst>,
    pub gain: f64,
    pub offset_grams: f64,
}

fn load_fraction(v: &ScheduledVisit, t: i64) -> f64 {
    if t < v.entry_ms || t >= v.exit_ms + RAMP_MS {
        0.0
    } else if t < v.entry_ms + RAMP_MS {
        (t - v.entry_ms) as f64 / RAMP_MS as f64
    } else if t < v.exit_ms {
        1.0
    } else {
        1.0 - (t - v.exit_ms) as f64 / RAMP_MS as f64
    }
}

/// Noise-free platform load at `t`.
pub fn true_load(sc: &Scenario, t: i64) -> f64 {
    sc.visits
        .iter()
        .map(|v| sc.animals[v.animal].weight_at(v.entry_ms) * load_fraction(v, t))
        .sum()
}

fn sample_times(sc: &Scenario) -> Vec<i64> {
    let end = sc.duration_ms;
    if !sc.sparse {
        return (0..).map(|k| k * SAMPLE_PERIOD_MS).take_while(|&t| t < end).collect();
    }
    let mut spans: Vec<(i64, i64)> = sc
        .visits
        .iter()
        .map(|v| ((v.entry_ms - SPARSE_MARGIN_MS).max(0), (v.exit_ms + RAMP_MS + SPARSE_MARGIN_MS).min(end)))
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
        .into_iter()
        .flat_map(|(a, b)| {
            let first = (a + SAMPLE_PERIOD_MS - 1) / SAMPLE_PERIOD_MS;
            (first..).map(|k| k * SAMPLE_PERIOD_MS).take_while(move |&t| t < b)
        })
        .collect()
}

fn load_edges(sc: &Scenario) -> Vec<(i64, i64)> {
    let mut e: Vec<(i64, i64)> = sc
        .visits
        .iter()
        .flat_map(|v| [(v.entry_ms, v.entry_ms + RAMP_MS), (v.exit_ms, v.exit_ms + RAMP_MS)])
        .collect();
    e.sort_unstable();
    e
}

fn near_edge(edges: &[(i64, i64)], from: i64, to: i64) -> bool {
    let i = edges.partition_point(|&(_, end)| end < from);
    edges[i..].first().is_some_and(|&(start, _)| start <= to)
}

fn generate_bursts(sc: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Burst> {
    let n = &sc.noise;
    if n.burst_rate_hz <= 0.0 || sc.visits.is_empty() {
        return Vec::new();
    }
    let edges = load_edges(sc);
    let gap = Exp::new(n.burst_rate_hz / 1000.0).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += BURST_MIN_GAP_MS + gap.sample(rng);
        let start = t as i64;
        if start >= sc.duration_ms {
            break;
        }
        let duration_ms = rng.random_range(n.burst_min_ms..=n.burst_max_ms);
        let amplitude_grams = rng.random_range(-n.burst_max_grams..=n.burst_max_grams);
        let end = start + duration_ms;
        if true_load(sc, start) > 0.0 && !near_edge(&edges, start - BURST_CLEARANCE_MS, end + BURST_CLEARANCE_MS) {
            out.push(Burst { start_ms: start, duration_ms, amplitude_grams });
            t = end as f64;
        }
    }
    out
}

/// Synthesize the scale and reader streams of a scenario, plus what really
/// happened.
pub fn generate_trace(sc: &Scenario) -> Result<GeneratedTrace, ScenarioError> {
    sc.validate()?;
    let mut noise_rng = rng_for(sc.seed, STREAM_NOISE);
    let n = &sc.noise;
    let gain = if n.gain_sigma > 0.0 { Normal::new(0.0, n.gain_sigma).unwrap().sample(&mut noise_rng) } else { 0.0 };
    let offset_grams =
        if n.offset_sigma_grams > 0.0 { Normal::new(0.0, n.offset_sigma_grams).unwrap().sample(&mut noise_rng) } else { 0.0 };
    let bursts = generate_bursts(sc, &mut noise_rng);
    let white = (n.sigma_grams > 0.0).then(|| Normal::new(0.0, n.sigma_grams).unwrap());

    let mut order: Vec<&ScheduledVisit> = sc.visits.iter().collect();
    order.sort_by_key(|v| v.entry_ms);
    let mut next_visit = 0;
    let mut active: Vec<&ScheduledVisit> = Vec::new();
    let mut burst_i = 0;
    let mut last_load = 0.0;
    let mut load_since = 0i64;

    let times = sample_times(sc);
    let mut samples = Vec::with_capacity(times.len());
    for t in times {
        while next_visit < order.len() && order[next_visit].entry_ms <= t {
            active.push(order[next_visit]);
            next_visit += 1;
        }
        active.retain(|v| t < v.exit_ms + RAMP_MS);
        let load: f64 = active.iter().map(|v| sc.animals[v.animal].weight_at(v.entry_ms) * load_fraction(v, t)).sum();
        if (load - last_load).abs() > 1e-12 {
            load_since = t;
            last_load = load;
        }
        let creep = n.creep_fraction * load * (1.0 - (-((t - load_since) as f64) / n.creep_tau_ms).exp());
        while burst_i < bursts.len() && bursts[burst_i].start_ms + bursts[burst_i].duration_ms <= t {
            burst_i += 1;
        }
        let burst = bursts.get(burst_i).map_or(0.0, |b| b.value(t));
        let noise = white.map_or(0.0, |d| d.sample(&mut noise_rng));
        samples.push(WeightSample::new(t, load * (1.0 + gain) + creep + offset_grams + noise + burst));
    }

    let mut rfid_rng = rng_for(sc.seed, STREAM_RFID);
    let station_id = 1;
    let mut detections = Vec::new();
    let mut truth = Vec::with_capacity(sc.visits.len());
    for v in &order {
        let animal = &sc.animals[v.animal];
        let mut read = false;
        if let Some(tag) = animal.tag {
            for ramp in [v.entry_ms, v.exit_ms] {
                let ts = ramp + rfid_rng.random_range(0..=PASS_JITTER_MS);
                let in_outage = sc.rfid_outage_ms.is_some_and(|(a, b)| (a..b).contains(&ts));
                if let Some(d) = simulate_pass(tag, ts, station_id, sc.p_detect, &mut rfid_rng) {
                    if !in_outage {
                        read = true;
                        detections.push(d);
                    }
                }
            }
        }
        truth.push(TruthVisit {
            animal: v.animal,
            tag: animal.tag,
            entry_ms: v.entry_ms,
            exit_ms: v.exit_ms,
            weight_grams: animal.weight_at(v.entry_ms),
            read,
        });
    }
    detections.sort_by_key(|d| d.ts);
    Ok(GeneratedTrace { samples, detections, truth, bursts, gain, offset_grams })
}

/// Merge a generated trace and the scenario's injected faults into one
/// time-ordered station input stream.
pub fn station_inputs(sc: &Scenario, trace: &GeneratedTrace) -> Vec<StationInput> {
    let mut out: Vec<StationInput> = Vec::with_capacity(trace.samples.len() + trace.detections.len() + 4);
    out.extend(trace.samples.iter().copied().map(StationInput::Sample));
    out.extend(trace.detections.iter().copied().map(StationInput::Detection));
    if let Some((a, b)) = sc.rfid_outage_ms {
        out.push(StationInput::RfidFault { ts: a, down: true });
        out.push(StationInput::RfidFault { ts: b, down: false });
    }
    if let Some(ts) = sc.humidity_fault_ms {
        out.push(StationInput::Env { ts, reading: EnvReading { rh_in_pct: 95.0, ..EnvReading::default() } });
    }
    out.sort_by_key(|i| i.ts());
    out
}
