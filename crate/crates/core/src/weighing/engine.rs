use std::collections::VecDeque;

use log::{debug, warn};
use thiserror::Error;

use super::attribution::{attribute_weights, PeriodSummary, ShiftEvent, ShiftKind};
use super::stability::{find_stability_windows, mean_std, stable_weight};
use super::{AnimalVisit, ScaleState, WeighingConfig, WeightSample};

#[derive(Debug, Clone, PartialEq)]
pub enum WeighingEvent {
    /// An animal entered; `onset_ts` is the first sample of the shift.
    Entrance { ts: i64, onset_ts: i64, animal_count: u32 },
    Exit { ts: i64, onset_ts: i64, animal_count: u32, animals_left: u32 },
    /// Visits of one occupancy episode, emitted once the platform has been
    /// empty for the settle time.
    Visits(Vec<AnimalVisit>),
    /// Reading outside the load-cell range; the sample was dropped.
    SensorFault { ts: i64, grams: f64 },
    /// Timestamp not after the previous one; the sample was dropped.
    Rejected { ts: i64, last_ts: i64 },
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ZeroError {
    #[error("scale can only be zeroed while idle (state {0:?})")]
    NotIdle(ScaleState),
    #[error("no samples to zero on")]
    Empty,
}

/// Mean of the stable samples seen so far in the current period, used as
/// the reference level for shift detection.
#[derive(Debug, Clone)]
struct LevelTracker {
    initial: f64,
    level: f64,
    stable_sum: f64,
    stable_n: usize,
    run_sum: f64,
    run_n: usize,
    run_last: Option<f64>,
}

impl LevelTracker {
    fn new(initial: f64) -> Self {
        Self {
            initial,
            level: initial,
            stable_sum: 0.0,
            stable_n: 0,
            run_sum: 0.0,
            run_n: 0,
            run_last: None,
        }
    }

    fn observe(&mut self, x: f64, cfg: &WeighingConfig, min_len: usize) {
        if (x - self.level).abs() > cfg.entrance_grams {
            self.close_run(min_len);
            return;
        }
        match self.run_last {
            Some(prev) if (x - prev).abs() <= cfg.stability_delta_grams => {
                self.run_sum += x;
                self.run_n += 1;
            }
            _ => {
                self.close_run(min_len);
                self.run_sum = x;
                self.run_n = 1;
            }
        }
        self.run_last = Some(x);
        let (sum, n) = if self.run_n >= min_len {
            (self.stable_sum + self.run_sum, self.stable_n + self.run_n)
        } else {
            (self.stable_sum, self.stable_n)
        };
        self.level = if n > 0 { sum / n as f64 } else { self.initial };
    }

    fn has_stable(&self, min_len: usize) -> bool {
        self.stable_n > 0 || self.run_n >= min_len
    }

    fn close_run(&mut self, min_len: usize) {
        if self.run_n >= min_len {
            self.stable_sum += self.run_sum;
            self.stable_n += self.run_n;
        }
        self.run_sum = 0.0;
        self.run_n = 0;
        self.run_last = None;
    }
}

#[derive(Debug, Clone)]
struct Episode {
    baseline: f64,
    periods: Vec<PeriodSummary>,
    events: Vec<ShiftEvent>,
}

/// The weighing state machine.
///
/// Single-threaded; feed samples in timestamp order with [`ingest`](Self::ingest).
#[derive(Debug, Clone)]
pub struct WeighingEngine {
    cfg: WeighingConfig,
    window_len: usize,
    stability_len: usize,
    settle_len: usize,
    idle_capacity: usize,

    state: ScaleState,
    animal_count: u32,
    tare: f64,
    last_ts: Option<i64>,
    last_zero_ts: Option<i64>,

    /// Tared samples while idle, oldest first.
    idle: VecDeque<WeightSample>,
    idle_level: f64,
    idle_run: LevelTracker,
    idle_rise: usize,

    episode: Option<Episode>,
    /// Samples of the open period: the weighing period, or the closing
    /// period while an episode waits to be finalized.
    current: Vec<WeightSample>,
    tracker: LevelTracker,
    rise: usize,
    fall: usize,
    closing: bool,
    /// Set after an exit that left animals behind, until the new period
    /// shows a stable level; a level back at baseline means everyone left.
    exit_unconfirmed: bool,
}

impl WeighingEngine {
    pub fn new(cfg: WeighingConfig) -> Self {
        let window_len = cfg.window_len();
        let stability_len = cfg.stability_len();
        let settle_len = cfg.samples_for(cfg.settle_seconds).max(stability_len);
        let idle_capacity = cfg.samples_for(cfg.idle_history_seconds).max(window_len + stability_len);
        Self {
            cfg,
            window_len,
            stability_len,
            settle_len,
            idle_capacity,
            state: ScaleState::Idle,
            animal_count: 0,
            tare: 0.0,
            last_ts: None,
            last_zero_ts: None,
            idle: VecDeque::new(),
            idle_level: 0.0,
            idle_run: LevelTracker::new(0.0),
            idle_rise: 0,
            episode: None,
            current: Vec::new(),
            tracker: LevelTracker::new(0.0),
            rise: 0,
            fall: 0,
            closing: false,
            exit_unconfirmed: false,
        }
    }

    pub fn config(&self) -> &WeighingConfig {
        &self.cfg
    }

    pub fn state(&self) -> ScaleState {
        self.state
    }

    pub fn animal_count(&self) -> u32 {
        self.animal_count
    }

    pub fn tare(&self) -> f64 {
        self.tare
    }

    /// Raw reading with the current tare applied.
    pub fn tared(&self, raw_grams: f64) -> f64 {
        raw_grams - self.tare
    }

    /// Level the next shift is measured against.
    pub fn reference_level(&self) -> f64 {
        match self.state {
            ScaleState::Weighing => self.tracker.level,
            _ => self.idle_level,
        }
    }

    /// True while a finished episode waits for the settle time.
    pub fn has_pending_visits(&self) -> bool {
        self.closing
    }

    pub fn ingest(&mut self, sample: WeightSample) -> Vec<WeighingEvent> {
        let mut out = Vec::new();
        if let Some(last) = self.last_ts {
            if sample.t <= last {
                warn!(target: "weighing", "rejected sample at {} (last {})", sample.t, last);
                out.push(WeighingEvent::Rejected { ts: sample.t, last_ts: last });
                return out;
            }
        }
        self.last_ts = Some(sample.t);
        if !sample.grams.is_finite() || sample.grams < self.cfg.min_grams || sample.grams > self.cfg.max_grams {
            warn!(target: "weighing", "load cell reading {} g out of range", sample.grams);
            out.push(WeighingEvent::SensorFault { ts: sample.t, grams: sample.grams });
            return out;
        }
        let s = WeightSample::new(sample.t, sample.grams - self.tare);
        match self.state {
            ScaleState::Weighing => self.weighing_step(s, &mut out),
            _ => self.idle_step(s, &mut out),
        }
        out
    }

    /// Finalize an episode still waiting for its settle time. Animals still
    /// on the platform are not reported.
    pub fn flush(&mut self) -> Vec<WeighingEvent> {
        let mut out = Vec::new();
        if self.closing {
            let closing = std::mem::take(&mut self.current);
            self.finalize(&closing, &mut out);
        }
        out
    }

    /// Move the tare so that the mean of `window` (tared readings) becomes
    /// zero, limited to the configured drift rate since the last zeroing.
    /// Returns the applied correction.
    pub fn zero_scale(&mut self, window: &[WeightSample]) -> Result<f64, ZeroError> {
        if self.state != ScaleState::Idle {
            warn!(target: "weighing", "zeroing ignored in state {:?}", self.state);
            return Err(ZeroError::NotIdle(self.state));
        }
        let (first, last) = match (window.first(), window.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(ZeroError::Empty),
        };
        let mean = window.iter().map(|s| s.grams).sum::<f64>() / window.len() as f64;
        let since = self.last_zero_ts.unwrap_or(first.t);
        let elapsed_s = ((last.t - since).max(0)) as f64 / 1000.0;
        let limit = self.cfg.zero_rate_grams_per_10s * elapsed_s / 10.0;
        let correction = mean.clamp(-limit, limit);
        self.last_zero_ts = Some(last.t);
        if correction != 0.0 {
            self.tare += correction;
            for s in self.idle.iter_mut().chain(self.current.iter_mut()) {
                s.grams -= correction;
            }
            self.idle_level -= correction;
            self.idle_run = LevelTracker::new(self.idle_level);
            debug!(target: "weighing", "tare {:+.3} g -> {:.3} g", correction, self.tare);
        }
        Ok(correction)
    }

    fn idle_step(&mut self, s: WeightSample, out: &mut Vec<WeighingEvent>) {
        self.idle.push_back(s);
        if self.idle.len() > self.idle_capacity {
            self.idle.pop_front();
        }
        if self.closing {
            self.current.push(s);
        }

        if s.grams - self.idle_level > self.cfg.entrance_grams {
            self.idle_rise += 1;
        } else {
            self.idle_rise = 0;
        }
        if self.idle_rise >= self.window_len {
            self.enter_from_idle(s.t, out);
            return;
        }

        self.idle_run.observe(s.grams, &self.cfg, self.stability_len);
        if self.idle_run.run_n >= self.stability_len {
            self.idle_level = self.idle_run.run_sum / self.idle_run.run_n as f64;
        }

        if self.closing && self.current.len() >= self.settle_len {
            let closing = std::mem::take(&mut self.current);
            self.finalize(&closing, out);
        }

        if !self.closing && self.idle_run.run_n >= self.stability_len {
            let due = self.last_zero_ts.is_none_or(|z| s.t - z >= 1000);
            if due {
                let tail: Vec<WeightSample> = self.idle.iter().rev().take(self.stability_len).rev().copied().collect();
                let _ = self.zero_scale(&tail);
            }
        }
    }

    fn enter_from_idle(&mut self, ts: i64, out: &mut Vec<WeighingEvent>) {
        let rise = self.idle_rise;
        if self.closing {
            let keep = self.current.len().saturating_sub(rise);
            let mut closing = std::mem::take(&mut self.current);
            closing.truncate(keep);
            self.finalize(&closing, out);
        }
        let idle: Vec<WeightSample> = self.idle.drain(..).collect();
        let onset = idle.len() - rise.min(idle.len());
        let baseline = self.summarize(&idle[..onset], self.idle_level);
        let run = idle[onset..].to_vec();
        let onset_ts = run.first().map_or(ts, |s| s.t);

        self.episode = Some(Episode {
            baseline: baseline.level(),
            periods: vec![baseline],
            events: vec![ShiftEvent { ts: onset_ts, kind: ShiftKind::Entrance }],
        });
        self.animal_count = 1;
        self.state = ScaleState::Weighing;
        self.start_period(run);
        debug!(target: "weighing", "entrance at {onset_ts}, count 1");
        out.push(WeighingEvent::Entrance { ts, onset_ts, animal_count: 1 });
    }

    fn start_period(&mut self, samples: Vec<WeightSample>) {
        let level = samples.last().map_or(self.tracker.level, |s| s.grams);
        self.tracker = LevelTracker::new(level);
        for s in &samples {
            self.tracker.observe(s.grams, &self.cfg, self.stability_len);
        }
        self.current = samples;
        self.rise = 0;
        self.fall = 0;
    }

    fn weighing_step(&mut self, s: WeightSample, out: &mut Vec<WeighingEvent>) {
        self.current.push(s);
        let reference = self.tracker.level;
        let t = self.cfg.entrance_grams;
        if s.grams - reference > t {
            self.rise += 1;
        } else {
            self.rise = 0;
        }
        if s.grams - reference < -t {
            self.fall += 1;
        } else {
            self.fall = 0;
        }
        self.tracker.observe(s.grams, &self.cfg, self.stability_len);

        if self.exit_unconfirmed && self.tracker.has_stable(self.stability_len) {
            self.exit_unconfirmed = false;
            let baseline = self.episode.as_ref().map_or(0.0, |e| e.baseline);
            if self.tracker.level < baseline + t {
                self.remaining_left(s.t, out);
                return;
            }
        }

        let baseline = self.episode.as_ref().map_or(0.0, |e| e.baseline);
        if self.tracker.has_stable(self.stability_len) && self.tracker.level < baseline + t {
            // too light for a single animal: everyone counted has gone
            let onset = self.current.iter().position(|x| x.grams < baseline + t).unwrap_or(0);
            let animals = self.animal_count;
            self.shift(ShiftKind::Exit { animals }, onset, s.t, out);
            return;
        }

        if self.rise >= self.window_len {
            let onset = self.current.len() - self.rise;
            self.shift(ShiftKind::Entrance, onset, s.t, out);
            return;
        }
        // like an entrance, an exit must hold for the whole window; this
        // implies the window mean is below the band and keeps ramp samples
        // out of the next period's reference
        if self.fall >= self.window_len {
            let onset = self.current.len() - self.fall;
            self.shift(ShiftKind::Exit { animals: 1 }, onset, s.t, out);
        }
    }

    fn shift(&mut self, kind: ShiftKind, onset: usize, ts: i64, out: &mut Vec<WeighingEvent>) {
        let mut samples = std::mem::take(&mut self.current);
        let next = samples.split_off(onset);
        let onset_ts = next.first().map_or(ts, |s| s.t);
        let summary = self.summarize(&samples, self.tracker.level);
        let Some(episode) = self.episode.as_mut() else {
            return;
        };
        episode.periods.push(summary);

        match kind {
            ShiftKind::Entrance => {
                self.animal_count += 1;
                episode.events.push(ShiftEvent { ts: onset_ts, kind });
                debug!(target: "weighing", "entrance at {onset_ts}, count {}", self.animal_count);
                out.push(WeighingEvent::Entrance { ts, onset_ts, animal_count: self.animal_count });
                self.start_period(next);
            }
            ShiftKind::Exit { animals: leaving } => {
                self.animal_count -= leaving;
                episode.events.push(ShiftEvent { ts: onset_ts, kind: ShiftKind::Exit { animals: leaving } });
                debug!(target: "weighing", "exit at {onset_ts}, {leaving} left, count {}", self.animal_count);
                out.push(WeighingEvent::Exit {
                    ts,
                    onset_ts,
                    animal_count: self.animal_count,
                    animals_left: leaving,
                });
                if self.animal_count == 0 {
                    let baseline = episode.baseline;
                    self.begin_closing(next, baseline, out);
                } else {
                    self.start_period(next);
                    self.exit_unconfirmed = true;
                }
            }
        }
    }

    /// The platform went back to baseline after an exit that was counted
    /// for one animal: the others left with it.
    fn remaining_left(&mut self, ts: i64, out: &mut Vec<WeighingEvent>) {
        let Some(episode) = self.episode.as_mut() else {
            return;
        };
        let remaining = self.animal_count;
        let Some(last) = episode.events.last_mut() else {
            return;
        };
        let ShiftKind::Exit { animals } = last.kind else {
            return;
        };
        last.kind = ShiftKind::Exit { animals: animals + remaining };
        let onset_ts = last.ts;
        let baseline = episode.baseline;
        self.animal_count = 0;
        debug!(target: "weighing", "{remaining} more left at {onset_ts}, count 0");
        out.push(WeighingEvent::Exit { ts, onset_ts, animal_count: 0, animals_left: remaining });
        let samples = std::mem::take(&mut self.current);
        self.begin_closing(samples, baseline, out);
    }

    fn begin_closing(&mut self, samples: Vec<WeightSample>, baseline: f64, out: &mut Vec<WeighingEvent>) {
        self.state = ScaleState::Idle;
        self.closing = true;
        self.exit_unconfirmed = false;
        self.idle_level = baseline;
        self.idle_run = LevelTracker::new(baseline);
        self.idle = samples.iter().copied().collect();
        while self.idle.len() > self.idle_capacity {
            self.idle.pop_front();
        }
        self.idle_rise = 0;
        for s in &samples {
            self.idle_run.observe(s.grams, &self.cfg, self.stability_len);
        }
        if self.idle_run.run_n >= self.stability_len {
            self.idle_level = self.idle_run.run_sum / self.idle_run.run_n as f64;
        }
        self.current = samples;
        if self.current.len() >= self.settle_len {
            let closing = std::mem::take(&mut self.current);
            self.finalize(&closing, out);
        }
    }

    fn summarize(&self, samples: &[WeightSample], fallback_level: f64) -> PeriodSummary {
        let windows = find_stability_windows(samples, self.cfg.stability_delta_grams, self.stability_len);
        let stable = stable_weight(samples, &windows);
        let raw_std = if samples.is_empty() {
            0.0
        } else {
            mean_std(samples.iter().map(|s| s.grams)).1
        };
        PeriodSummary {
            start_ts: samples.first().map_or(0, |s| s.t),
            end_ts: samples.last().map_or(0, |s| s.t),
            stable,
            fallback_level,
            raw_std_grams: raw_std,
        }
    }

    fn finalize(&mut self, closing: &[WeightSample], out: &mut Vec<WeighingEvent>) {
        self.closing = false;
        let Some(mut episode) = self.episode.take() else {
            return;
        };
        let summary = self.summarize(closing, self.idle_level);
        episode.periods.push(summary);
        match attribute_weights(&episode.periods, &episode.events, self.cfg.pairing_tolerance_grams) {
            Ok(attributions) => {
                let visits: Vec<AnimalVisit> = attributions
                    .into_iter()
                    .filter(|a| {
                        let keep = a.weight_grams > 0.0 && a.exit_ts > a.entry_ts;
                        if !keep {
                            warn!(target: "weighing", "dropping visit with weight {:.1} g", a.weight_grams);
                        }
                        keep
                    })
                    .map(|a| AnimalVisit {
                        tag: None,
                        entry_ts: a.entry_ts,
                        exit_ts: a.exit_ts,
                        weight_grams: a.weight_grams,
                        quality_std_grams: a.quality_std_grams,
                        station_id: self.cfg.station_id,
                        flags: a.flags,
                    })
                    .collect();
                if !visits.is_empty() {
                    out.push(WeighingEvent::Visits(visits));
                }
            }
            Err(e) => warn!(target: "weighing", "attribution failed: {e}"),
        }
    }
}
