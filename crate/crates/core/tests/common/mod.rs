#![allow(dead_code)]

//! Independent reference implementations shared by integration tests.

use feedstation::simharness::{NoiseModel, Scenario, RAMP_MS};
use feedstation::weighing::{WeighingConfig, WeighingEngine, WeighingEvent, WeightSample};
use rand::Rng;

pub const SHIFT_G: f64 = 20.0;
pub const STEP_G: f64 = 1.0;
pub const MIN_RUN: usize = 20;
pub const PAIR_TOL_G: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub entry_ts: i64,
    pub exit_ts: i64,
    pub weight: f64,
}

/// Maximal runs with every step at most 1 g and at least 20 samples,
/// found by checking every (start, end) pair.
pub fn brute_force_runs(x: &[f64]) -> Vec<(usize, usize)> {
    let n = x.len();
    let ok = |a: usize, b: usize| (a + 1..=b).all(|k| (x[k] - x[k - 1]).abs() <= STEP_G);
    let mut out = Vec::new();
    for a in 0..n {
        if a > 0 && (x[a] - x[a - 1]).abs() <= STEP_G {
            continue;
        }
        let mut best = None;
        for b in a..n {
            if ok(a, b) {
                best = Some(b);
            } else {
                break;
            }
        }
        if let Some(b) = best {
            if b + 1 - a >= MIN_RUN {
                out.push((a, b));
            }
        }
    }
    out
}

/// Visits of a noise-free trace: plateaus from maximal stable runs, an event
/// wherever consecutive plateaus differ by more than 20 g, onset at the
/// first sample past the 20 g band, exits paired to entrances by trying
/// every assignment.
pub fn oracle_segmentation(samples: &[WeightSample]) -> Vec<Segment> {
    let x: Vec<f64> = samples.iter().map(|s| s.grams).collect();
    let runs = brute_force_runs(&x);
    let level = |&(a, b): &(usize, usize)| x[a..=b].iter().sum::<f64>() / (b + 1 - a) as f64;
    // (onset ts, signed shift)
    let mut events: Vec<(i64, f64)> = Vec::new();
    let mut prev: Option<((usize, usize), f64)> = None;
    for r in &runs {
        let l = level(r);
        if let Some((p, pl)) = prev {
            let d = l - pl;
            if d.abs() > SHIFT_G {
                let onset = (p.1 + 1..r.0)
                    .find(|&k| if d > 0.0 { x[k] - pl > SHIFT_G } else { x[k] < pl - SHIFT_G })
                    .expect("a shift crosses the band");
                events.push((samples[onset].t, d));
            } else {
                // same occupancy; keep the earlier plateau as reference
                continue;
            }
        }
        prev = Some((*r, l));
    }
    let entries: Vec<(i64, f64)> = events.iter().copied().filter(|e| e.1 > 0.0).collect();
    let exits: Vec<(i64, f64)> = events.iter().copied().filter(|e| e.1 < 0.0).map(|(t, d)| (t, -d)).collect();
    assert_eq!(entries.len(), exits.len(), "trace must end empty");
    let assignment = best_assignment(&entries, &exits);
    let mut out: Vec<Segment> = assignment
        .into_iter()
        .enumerate()
        .map(|(ei, xi)| Segment { entry_ts: entries[ei].0, exit_ts: exits[xi].0, weight: entries[ei].1 })
        .collect();
    out.sort_by_key(|s| s.entry_ts);
    out
}

/// Exit index for each entrance. Feasible: every exit comes after its
/// entrance and agrees within the tolerance. Among feasible assignments
/// the smallest total disagreement wins, then the one that pairs exits
/// with the earliest entrances.
pub fn best_assignment(entries: &[(i64, f64)], exits: &[(i64, f64)]) -> Vec<usize> {
    let n = entries.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let feasible = (0..n).all(|e| exits[p[e]].0 > entries[e].0 && (exits[p[e]].1 - entries[e].1).abs() <= PAIR_TOL_G);
        if !feasible {
            return;
        }
        let cost: f64 = (0..n).map(|e| (exits[p[e]].1 - entries[e].1).abs()).sum();
        let better = match &best {
            None => true,
            Some((c, bp)) => cost < c - 1e-9 || ((cost - c).abs() <= 1e-9 && p < bp.as_slice()),
        };
        if better {
            best = Some((cost, p.to_vec()));
        }
    });
    best.expect("a feasible pairing exists").1
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Visits found by the engine, with an idle history that outlasts any trace
/// so that the baseline period matches the oracle's unbounded one.
pub fn engine_segmentation(samples: &[WeightSample]) -> Vec<Segment> {
    let cfg = WeighingConfig { idle_history_seconds: 200.0, ..WeighingConfig::default() };
    let mut e = WeighingEngine::new(cfg);
    let mut events: Vec<WeighingEvent> = samples.iter().flat_map(|s| e.ingest(*s)).collect();
    events.extend(e.flush());
    let mut out: Vec<Segment> = events
        .into_iter()
        .filter_map(|ev| match ev {
            WeighingEvent::Visits(v) => Some(v),
            _ => None,
        })
        .flatten()
        .map(|v| Segment { entry_ts: v.entry_ts, exit_ts: v.exit_ts, weight: v.weight_grams })
        .collect();
    out.sort_by_key(|s| s.entry_ts);
    out
}

/// Noise-free scenario of at most `max_samples` at 20 Hz with up to three
/// animals. Events are at least 2 s apart and weights differ by more than
/// twice the pairing tolerance.
pub fn random_clean_scenario<R: Rng>(rng: &mut R, max_samples: usize) -> Scenario {
    let limit = max_samples as i64 * 50;
    let mut sc = Scenario { duration_ms: limit, noise: NoiseModel::noise_free(), ..Default::default() };
    let n_animals = rng.random_range(0..=3usize);
    let mut weights: Vec<f64> = Vec::new();
    while weights.len() < n_animals {
        let w = (rng.random_range(25.0..150.0f64) * 10.0).round() / 10.0;
        if weights.iter().all(|o| (o - w).abs() > 2.0 * PAIR_TOL_G + 0.5) {
            weights.push(w);
        }
    }
    let ids: Vec<usize> = weights.iter().enumerate().map(|(i, &w)| sc.add_animal(&format!("a{i}"), None, w)).collect();
    let gap = || 2_000 + RAMP_MS;
    let spread = if max_samples >= 1_600 { 10_000 } else { 3_000 };
    let mut t = rng.random_range(1_500..4_000i64);
    let mut pending: Vec<usize> = ids.clone();
    let mut present: Vec<(usize, i64)> = Vec::new();
    loop {
        let can_enter = !pending.is_empty();
        let enter = can_enter && (present.is_empty() || rng.random_bool(0.5));
        if enter {
            let a = pending.remove(rng.random_range(0..pending.len()));
            present.push((a, t));
        } else if let Some(i) = (!present.is_empty()).then(|| rng.random_range(0..present.len())) {
            let (a, entry) = present.remove(i);
            sc.add_visit(a, entry, t);
        } else {
            break;
        }
        t += gap() + rng.random_range(0..spread);
    }
    // leave room for the settle time after the last exit
    let end = t + 1_000;
    if end > limit {
        return random_clean_scenario(rng, max_samples);
    }
    sc.duration_ms = end;
    sc
}

/// Same visits with identical boundaries; weights may differ only by
/// floating-point summation order.
pub fn same_segmentation(a: &[Segment], b: &[Segment]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.entry_ts == y.entry_ts && x.exit_ts == y.exit_ts && (x.weight - y.weight).abs() < 1e-9)
}
